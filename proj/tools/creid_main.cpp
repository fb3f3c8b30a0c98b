#include <iostream>

int main() {
  std::cout << "creid: placeholder\n";
  return 0;
}
