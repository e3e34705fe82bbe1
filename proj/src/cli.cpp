#include "scatfit/cli.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <thread>

#include <CLI11.hpp>

#include "scatfit/modelfile.hpp"
#include "scatfit/output.hpp"
#include "scatfit/service.hpp"

namespace scatfit {

namespace {

std::atomic<bool> g_shutdown{false};

struct SimulateArgs {
  std::string model;
  std::vector<std::string> grid;
  std::string coords;
  std::string out;
  std::string format;
  std::vector<std::string> functors;
  bool linear = false;
};

struct FitArgs {
  std::string model;
  std::string optimizer;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> models;
  std::string save_model;
};

struct ServeArgs {
  std::string model;
  int port = 0;
  std::string host = "127.0.0.1";
  std::string static_dir;
  std::string out;
};

int default_port() {
  if (const char* env = std::getenv("SCATFIT_PORT")) {
    int p = 0;
    const std::string_view s(env);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), p);
    if (ec == std::errc() && ptr == s.data() + s.size() && p > 0 && p < 65536) return p;
  }
  return 8050;
}

// Whitespace or comma separated numeric rows, `#` comments.
std::vector<std::vector<double>> read_coords(const std::string& path, std::size_t columns) {
  std::ifstream in(path);
  if (!in) throw ValueError("cannot open coordinate file '" + path + "'");
  std::vector<std::vector<double>> cols(columns);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::vector<double> row;
    std::size_t i = 0;
    auto sep = [](char c) { return c == ' ' || c == '\t' || c == ',' || c == ';' || c == '\r'; };
    while (i < line.size()) {
      while (i < line.size() && sep(line[i])) ++i;
      if (i >= line.size() || line[i] == '#') break;
      std::size_t j = i;
      while (j < line.size() && !sep(line[j])) ++j;
      double v = 0;
      auto [ptr, ec] = std::from_chars(line.data() + i, line.data() + j, v);
      if (ec != std::errc() || ptr != line.data() + j)
        throw ValueError(path + ": line " + std::to_string(line_no) + ": malformed number");
      row.push_back(v);
      i = j;
    }
    if (row.empty()) continue;
    if (row.size() < columns)
      throw ValueError(path + ": line " + std::to_string(line_no) + ": need " + std::to_string(columns) +
                       " columns");
    for (std::size_t c = 0; c < columns; ++c) cols[c].push_back(row[c]);
  }
  if (columns > 0 && cols[0].empty()) throw ValueError(path + ": no coordinate rows");
  return cols;
}

std::string suffixed(const std::string& out, const std::string& functor, std::size_t count) {
  if (count == 1) return out;
  const std::filesystem::path p(out);
  return (p.parent_path() / (p.stem().string() + "_" + functor + p.extension().string())).string();
}

int cmd_simulate(const SimulateArgs& a, std::ostream& out, std::ostream& err) {
  const ModelFile mf = ModelFile::load(a.model);
  std::vector<const Functor*> chosen;
  if (a.functors.empty()) {
    for (const auto& f : mf.functors()) chosen.push_back(&f);
  } else {
    for (const auto& n : a.functors) {
      const Functor* f = mf.find_functor(n);
      if (!f) throw SchemaError("--functor: unknown functor '" + n + "'");
      chosen.push_back(f);
    }
  }
  if (chosen.empty()) throw SchemaError("functors: no functors");
  std::string format = a.format;
  if (format.empty()) format = std::filesystem::path(a.out).extension() == ".png" ? "png" : "csv";

  std::vector<GridAxis> cli_axes;
  for (const auto& g : a.grid) cli_axes.push_back(parse_axis(g));

  for (const Functor* f : chosen) {
    std::vector<std::vector<double>> coords;
    std::vector<std::size_t> shape;
    if (!a.coords.empty()) {
      coords = read_coords(a.coords, f->arity());
      shape = {coords.empty() ? 0 : coords[0].size()};
    } else {
      std::vector<GridAxis> axes;
      for (const auto& ax : cli_axes)
        for (const auto& v : f->variables())
          if (v.name() == ax.name) axes.push_back(ax);
      if (axes.empty())
        for (const auto& g : mf.default_grid(f->name())) axes.push_back(parse_axis(g));
      if (axes.empty() && f->arity() > 0)
        throw SchemaError("functor '" + f->name() + "': no grid given (use --grid or --coords)");
      GridColumns g = grid_columns(axes, f->variables());
      coords = std::move(g.columns);
      shape = std::move(g.shape);
    }
    EvalDiagnostics diag;
    std::vector<std::string> header;
    for (const auto& v : f->variables()) header.push_back(v.name());
    std::vector<std::vector<double>> columns = coords;
    std::vector<double> plot_values;
    if (f->is_complex()) {
      const auto vals = f->evaluate_complex(coords, &diag);
      std::vector<double> re(vals.size()), im(vals.size());
      plot_values.resize(vals.size());
      for (std::size_t i = 0; i < vals.size(); ++i) {
        re[i] = vals[i].real();
        im[i] = vals[i].imag();
        plot_values[i] = std::norm(vals[i]);
      }
      header.push_back(f->name() + "_re");
      header.push_back(f->name() + "_im");
      columns.push_back(std::move(re));
      columns.push_back(std::move(im));
    } else {
      plot_values = f->evaluate(coords, &diag);
      header.push_back(f->name());
      columns.push_back(plot_values);
    }
    std::size_t nonfinite = 0;
    for (double v : plot_values) nonfinite += !std::isfinite(v);
    if (nonfinite) err << "warning: " << f->name() << ": " << nonfinite << " non-finite values\n";
    if (diag.nonconverged_integrals)
      err << "warning: " << f->name() << ": " << diag.nonconverged_integrals
          << " adaptive integrals did not converge\n";

    const std::string path = suffixed(a.out, f->name(), chosen.size());
    if (format == "csv") {
      std::ofstream os(path);
      if (!os) throw ValueError("cannot write '" + path + "'");
      write_csv(os, header, columns);
    } else if (format == "png") {
      std::vector<std::size_t> dims;
      for (std::size_t d = 0; d < shape.size(); ++d)
        if (shape[d] > 1) dims.push_back(d);
      if (!a.coords.empty() || dims.size() == 1) {
        const std::size_t d = dims.empty() ? 0 : dims[0];
        if (coords.empty()) throw ValueError("png: nothing to plot for a constant functor");
        write_png_curve(path, coords[d], plot_values, !a.linear);
      } else if (dims.size() == 2) {
        write_png_map(path, shape[dims[1]], shape[dims[0]], plot_values, !a.linear);
      } else {
        throw ValueError("png: grid must vary along one or two variables");
      }
    } else {
      throw ValueError("--format: expected csv or png");
    }
    out << "wrote " << path << " (" << plot_values.size() << " points)\n";
  }
  return kExitOk;
}

int cmd_fit(const FitArgs& a, std::ostream& out, std::ostream& err) {
  const ModelFile mf = ModelFile::load(a.model);
  FitConfig cfg = mf.fit_config();
  if (!a.optimizer.empty()) cfg.optimizer = optimizer_from_name(a.optimizer);
  if (a.seed) cfg.de.seed = *a.seed;
  if (!a.models.empty()) cfg.models = a.models;
  const auto target = mf.objective(cfg.models);
  const FitResult r = cfg.optimizer == Optimizer::lm ? fit_lm(*target, cfg.lm) : fit_de(*target, cfg.de);

  Json doc = snapshot_document(mf.parameters(), &r);
  doc["optimizer"] = cfg.optimizer == Optimizer::lm ? "lm" : "de";
  doc["chi2_history"] = r.chi2_history;
  doc["n_evaluations"] = r.n_evaluations;
  doc["message"] = r.message;
  if (!a.out.empty()) {
    std::ofstream os(a.out);
    if (!os) throw ValueError("cannot write '" + a.out + "'");
    os << doc.dump(2) << '\n';
  }
  if (!a.save_model.empty()) {
    if (std::filesystem::exists(a.save_model) &&
        std::filesystem::equivalent(a.save_model, a.model))
      throw ValueError("--save-model must not overwrite the input model file");
    std::ofstream os(a.save_model);
    if (!os) throw ValueError("cannot write '" + a.save_model + "'");
    os << mf.to_json().dump(2) << '\n';
  }
  out << std::setprecision(10);
  for (std::size_t i = 0; i < r.parameters.size(); ++i) {
    const Parameter& p = r.parameters[i];
    out << p.name() << " = " << p.raw_value();
    if (i < r.errors.size() && r.errors[i]) out << " +/- " << *r.errors[i];
    out << '\n';
  }
  out << "status = " << status_name(r.status) << '\n';
  out << "chi2 = " << r.chi2() << '\n';
  if (r.status == FitStatus::failed) {
    err << "error: fit failed: " << r.message << '\n';
    return kExitFit;
  }
  return kExitOk;
}

int cmd_serve(const ServeArgs& a, std::ostream& out, std::ostream&) {
  ServiceOptions opts;
  opts.host = a.host;
  opts.port = a.port > 0 ? a.port : default_port();
  opts.static_dir = a.static_dir;
  if (!a.out.empty()) opts.snapshot_out = a.out;
  Service service(ModelFile::load(a.model), opts);
  const int port = service.bind();
  out << "serving " << a.model << " on http://" << a.host << ":" << port << std::endl;
  g_shutdown = false;
  std::atomic<bool> done{false};
  std::thread watcher([&] {
    while (!done.load()) {
      if (g_shutdown.load()) {
        service.stop();
        break;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
  });
  service.listen();
  done = true;
  watcher.join();
  service.stop();
  out << "stopped" << std::endl;
  return kExitOk;
}

}  // namespace

void request_shutdown() noexcept { g_shutdown.store(true); }

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Scattering model simulation and fitting", "scatfit"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Evaluate functors on a grid and write CSV or PNG");
  s->add_option("model_file", sim.model, "Model file")->required();
  s->add_option("--grid", sim.grid, "Axis spec name=start:stop:step or name=start:stop/n");
  s->add_option("--coords", sim.coords, "File with one coordinate column per variable");
  s->add_option("--out", sim.out, "Output path; suffixed with the functor name for several")->required();
  s->add_option("--format", sim.format, "csv or png (default from extension)");
  s->add_option("--functor", sim.functors, "Functor to evaluate (default all)");
  s->add_flag("--linear", sim.linear, "Linear instead of log intensity scale for PNG");

  FitArgs fit;
  auto* f = app.add_subcommand("fit", "Fit the declared models");
  f->add_option("model_file", fit.model, "Model file")->required();
  f->add_option("--optimizer", fit.optimizer, "lm or de (default from the model file)");
  f->add_option("--seed", fit.seed, "Seed for differential evolution");
  f->add_option("--out", fit.out, "Results JSON");
  f->add_option("--model", fit.models, "Model to fit (default from the model file, else all)");
  f->add_option("--save-model", fit.save_model, "Write the model file with fitted values here");

  ServeArgs serve;
  auto* v = app.add_subcommand("serve", "Serve the HTTP API for a model file");
  v->add_option("model_file", serve.model, "Model file")->required();
  v->add_option("--port", serve.port, "Port (default $SCATFIT_PORT or 8050)");
  v->add_option("--host", serve.host, "Bind address");
  v->add_option("--static-dir", serve.static_dir, "Directory of UI assets served at /");
  v->add_option("--out", serve.out, "Write a parameter snapshot here on shutdown");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitSchema;
  }

  try {
    if (s->parsed()) return cmd_simulate(sim, out, err);
    if (f->parsed()) return cmd_fit(fit, out, err);
    return cmd_serve(serve, out, err);
  } catch (const EvalError& e) {
    err << "error: evaluation failed: " << e.what() << '\n';
    return kExitEval;
  } catch (const FitError& e) {
    err << "error: fit failed: " << e.what() << '\n';
    return kExitFit;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitSchema;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitSchema;
  }
}

}  // namespace scatfit
