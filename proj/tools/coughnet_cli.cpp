#include "coughnet/cli.hpp"

int main(int argc, char** argv) {
    return coughnet::cli::run(argc, argv);
}
