#pragma once

namespace dcspp {

/// Entry point of the dcspp tool. Returns 0 on success, 1 when a command
/// fails and 2 on a usage error.
int cli_main(int argc, const char* const* argv);

}  // namespace dcspp
