#pragma once

// The `scatfit` command line:
//
//   scatfit simulate MODEL --out PATH [--grid SPEC]... [--coords FILE]
//                          [--functor NAME]... [--format csv|png] [--linear]
//   scatfit fit MODEL [--optimizer lm|de] [--seed N] [--out results.json]
//                     [--model NAME]... [--save-model PATH]
//   scatfit serve MODEL [--port N] [--host H] [--static-dir DIR] [--out snapshot.json]
//
// Exit codes: 0 success, 1 usage or model-file error, 2 evaluation fault,
// 3 fit failure. The default port comes from SCATFIT_PORT, else 8050.

#include <iosfwd>
#include <string>
#include <vector>

namespace scatfit {

inline constexpr int kExitOk = 0;
inline constexpr int kExitSchema = 1;
inline constexpr int kExitEval = 2;
inline constexpr int kExitFit = 3;

// args[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Async-signal-safe: asks a running `serve` to shut down.
void request_shutdown() noexcept;

}  // namespace scatfit
