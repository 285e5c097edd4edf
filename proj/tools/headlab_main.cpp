#include <iostream>

int main() {
    std::cout << "headlab: not wired up yet\n";
    return 1;
}
