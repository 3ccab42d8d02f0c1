#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "lshg/threads.hpp"

int main(int argc, char** argv) {
    lshg::init_threads();
    return doctest::Context(argc, argv).run();
}
