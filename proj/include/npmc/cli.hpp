#pragma once

#include <ostream>

namespace npmc::cli {

enum ExitCode
{
    exit_success = 0,
    exit_usage = 1,
    exit_verification = 2,
    exit_numerical = 3,
};

/// Entry point of the `npmc` command; returns the process exit status.
int main(int argc, char** argv, std::ostream& out, std::ostream& err);

} // namespace npmc::cli
