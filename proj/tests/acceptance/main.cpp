#include <iostream>
#include <string>

#include "fedmark/kernels.hpp"
#include "fedmark_checks.hpp"

// Usage: fedmark_acceptance [comma-separated ids]
int main(int argc, char** argv) {
    fedmark::kernels::set_worker_count(1);
    const std::string only = argc > 1 ? argv[1] : "";
    return fedmark::checks::run_from_cli(only, true, std::cout);
}
