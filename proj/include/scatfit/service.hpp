#pragma once

// HTTP/JSON session over one loaded model file.
//
//   GET  /api/health
//   GET  /api/session                 inventory: parameters, functors, samples,
//                                     datasets, models (with chi2), fit state
//   PATCH /api/params                 {id: raw_value | {raw_value, fixed, bounds}}
//   GET  /api/curve?functor=&grid=    grid specs separated by ';' (optional when
//                                     the functor declares a grid or feeds a model)
//   GET  /api/model?model=            data, model values and chi2
//   GET  /api/profile?sample=&zmin=&zmax=&n=
//   POST /api/fit                     {optimizer, options, models} -> 202 {fit_id}
//   POST /api/fit/interrupt
//   GET  /api/fit                     state of the latest fit
//   GET  /api/fit/events?fit=         server-sent events, one JSON object per
//                                     message: {fit_id, iteration, chi2, params,
//                                     status}; the terminal message also has
//                                     errors, message and "terminal": true
//   GET/PUT /api/params/snapshot      parameter snapshot document
//
// Every response computed from parameter values carries the session revision,
// which increments on each parameter mutation (PATCH, snapshot PUT, end of a
// fit). Parameter writes are rejected with 409 while a fit runs.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "scatfit/modelfile.hpp"

namespace scatfit {

struct ServiceOptions {
  std::string host = "127.0.0.1";
  // 0 picks a free port.
  int port = 0;
  std::filesystem::path static_dir;
  // Snapshot written on shutdown.
  std::optional<std::filesystem::path> snapshot_out;
  // Minimum spacing of progress messages on the event stream.
  std::chrono::milliseconds event_interval{50};
};

class Service {
 public:
  Service(ModelFile model, ServiceOptions options = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds the listening socket and returns the port. Throws Error when the
  // address cannot be bound.
  int bind();
  // Serves until stop(). Requires bind().
  void listen();
  // bind() + listen() on a background thread; returns the port.
  int start();
  // Interrupts and joins any running fit, writes the snapshot if configured
  // and stops the server. Safe to call more than once and from any thread.
  void stop();

  const ModelFile& model() const noexcept;
  std::uint64_t revision() const noexcept;
  bool fit_running() const noexcept;
  // Blocks until the current fit (if any) has been finalized.
  void wait_for_fit();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace scatfit
