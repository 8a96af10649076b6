#include <string>
#include <vector>

#include "mtlhof/cli.hpp"

int main(int argc, char** argv) {
    return mtlhof::dispatch(std::vector<std::string>(argv + 1, argv + argc));
}
