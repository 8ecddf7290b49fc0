#pragma once

#include <iosfwd>

#include "mtm/cli/config.hpp"

namespace mtm::cli {

// Entry point shared by the executable and the tests. Data goes to `out`
// (or the --out path), diagnostics to `err`. Returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

int cmd_build_vocab(const Settings& s, std::ostream& out, std::ostream& err);
int cmd_train(const Settings& s, std::ostream& out, std::ostream& err);
int cmd_eval(const Settings& s, std::ostream& out, std::ostream& err);
int cmd_topics(const Settings& s, std::ostream& out, std::ostream& err);
int cmd_causal(const Settings& s, std::ostream& out, std::ostream& err);
int cmd_simulate(const Settings& s, std::ostream& out, std::ostream& err);
int cmd_grad_check(const Settings& s, std::ostream& out, std::ostream& err);

}  // namespace mtm::cli
