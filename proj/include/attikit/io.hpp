#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <system_error>

#include "attikit/error.hpp"
#include "attikit/sim.hpp"

namespace attikit {

/// Shortest decimal representation that round-trips the double exactly;
/// makes CSV determinism testable at the byte level.
inline std::string format_double(double x) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline std::string run_csv_header(const RunRecord& rec) {
  std::string h = "t,err_angle,bx,by,bz,v,vdot,pa_ctm_norm";
  for (const auto& c : rec.extra_columns) h += "," + c;
  return h;
}

inline std::string run_csv_text(const RunRecord& rec) {
  std::string out = run_csv_header(rec) + "\n";
  for (const auto& s : rec.samples) {
    out += format_double(s.t);
    out += ',';
    out += format_double(s.err_angle);
    out += ',';
    out += format_double(s.b_tilde.x());
    out += ',';
    out += format_double(s.b_tilde.y());
    out += ',';
    out += format_double(s.b_tilde.z());
    out += ',';
    out += format_double(s.v);
    out += ',';
    out += format_double(s.v_dot);
    out += ',';
    out += format_double(s.pa_ctm_norm);
    for (const double e : s.extras) {
      out += ',';
      out += format_double(e);
    }
    out += '\n';
  }
  return out;
}

inline std::string mc_csv_text(const McSummary& mc) {
  std::string out =
      "run,seed,settle_time_s,bias_settle_time_s,converged,final_err_angle_rad,"
      "final_bias_err_rad_s\n";
  for (const auto& r : mc.runs) {
    out += std::to_string(r.run_index);
    out += ',';
    out += std::to_string(r.seed);
    out += ',';
    out += format_double(r.settle_time);
    out += ',';
    out += format_double(r.bias_settle_time);
    out += ',';
    out += r.converged ? '1' : '0';
    out += ',';
    out += format_double(r.final_err_angle);
    out += ',';
    out += format_double(r.final_bias_err);
    out += '\n';
  }
  return out;
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw Error("write failed for " + path.string());
}

/// FNV-1a over a byte string; stable configuration fingerprint.
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (const unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace attikit
