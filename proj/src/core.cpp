#include "ddlp/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

namespace ddlp {

Micros seconds_to_micros(double seconds) {
  if (!std::isfinite(seconds)) throw std::invalid_argument("time must be finite");
  return static_cast<Micros>(std::llround(seconds * 1e6));
}

std::uint64_t DatasetSpec::n_batches() const {
  if (batch_size == 0) return 0;
  return (n_samples + batch_size - 1) / batch_size;
}

std::uint64_t DatasetSpec::samples_in_batch(std::uint64_t batch) const {
  const std::uint64_t nb = n_batches();
  if (batch >= nb) throw std::out_of_range("batch index out of range");
  const std::uint64_t first = batch * batch_size;
  return std::min(batch_size, n_samples - first);
}

void DatasetSpec::validate() const {
  if (n_samples == 0) throw std::invalid_argument("dataset: n_samples must be > 0");
  if (batch_size == 0) throw std::invalid_argument("dataset: batch_size must be > 0");
  if (height == 0 || width == 0) throw std::invalid_argument("dataset: empty sample shape");
  if (channels != 3) throw std::invalid_argument("dataset: channels must be 3");
}

void DeviceProfile::validate() const {
  if (t_cpu_path <= 0 || t_csd_pre <= 0 || t_gds_path <= 0)
    throw std::invalid_argument("profile: all path durations must be > 0");
}

const char* to_string(SourceTag tag) {
  switch (tag) {
    case SourceTag::CpuPath: return "cpu_path";
    case SourceTag::CsdPre: return "csd_pre";
    case SourceTag::GdsPath: return "gds_path";
  }
  throw std::logic_error("bad SourceTag");
}

SourceTag parse_source_tag(const std::string& s) {
  if (s == "cpu_path") return SourceTag::CpuPath;
  if (s == "csd_pre") return SourceTag::CsdPre;
  if (s == "gds_path") return SourceTag::GdsPath;
  throw std::invalid_argument("unknown source tag: " + s);
}

void Trace::add(TraceEvent ev) {
  if (ev.t_start < 0 || ev.t_end < ev.t_start)
    throw std::invalid_argument("trace event with negative or inverted interval");
  events.push_back(ev);
}

Micros Trace::makespan() const {
  Micros last = 0;
  for (const auto& ev : events)
    if (ev.source != SourceTag::CsdPre) last = std::max(last, ev.t_end);
  return last;
}

namespace {

void write_micros(std::ostream& out, Micros t) {
  char buf[40];
  // seconds with exactly 6 decimals: integer micros round-trip losslessly
  std::snprintf(buf, sizeof(buf), "%lld.%06lld", static_cast<long long>(t / 1000000),
                static_cast<long long>(t % 1000000));
  out << buf;
}

Micros parse_seconds_field(const std::string& field) {
  const auto dot = field.find('.');
  const std::string whole = dot == std::string::npos ? field : field.substr(0, dot);
  std::string frac = dot == std::string::npos ? "" : field.substr(dot + 1);
  if (frac.size() > 6) throw std::invalid_argument("trace csv: more than 6 decimals: " + field);
  frac.resize(6, '0');
  return std::stoll(whole) * 1000000 + std::stoll(frac.empty() ? "0" : frac);
}

}  // namespace

void Trace::write_csv(std::ostream& out) const {
  out << "t_start,t_end,source,batch_index,epoch\n";
  for (const auto& ev : events) {
    write_micros(out, ev.t_start);
    out << ',';
    write_micros(out, ev.t_end);
    out << ',' << to_string(ev.source) << ',' << ev.batch_index << ',' << ev.epoch << '\n';
  }
}

Trace Trace::read_csv(std::istream& in) {
  Trace trace;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line.rfind("t_start,", 0) == 0) continue;  // header
    }
    std::stringstream row(line);
    std::string f[5];
    for (int i = 0; i < 5; ++i)
      if (!std::getline(row, f[i], ',')) throw std::invalid_argument("trace csv: short row: " + line);
    std::string extra;
    if (std::getline(row, extra, ','))
      throw std::invalid_argument("trace csv: too many columns: " + line);
    TraceEvent ev;
    ev.t_start = parse_seconds_field(f[0]);
    ev.t_end = parse_seconds_field(f[1]);
    ev.source = parse_source_tag(f[2]);
    ev.batch_index = std::stoull(f[3]);
    ev.epoch = static_cast<std::uint32_t>(std::stoul(f[4]));
    trace.add(ev);
  }
  return trace;
}

std::vector<std::uint64_t> batch_indices(std::uint64_t n_batches, Side side, std::uint64_t count) {
  if (count > n_batches) throw std::out_of_range("batch_indices: count exceeds batch count");
  std::vector<std::uint64_t> out;
  out.reserve(count);
  for (std::uint64_t j = 0; j < count; ++j)
    out.push_back(side == Side::Head ? j : n_batches - 1 - j);
  return out;
}

std::vector<std::uint64_t> batch_indices(const DatasetSpec& spec, Side side, std::uint64_t count) {
  return batch_indices(spec.n_batches(), side, count);
}

std::string RunReport::to_json() const {
  nlohmann::json j;
  j["makespan"] = makespan;
  j["avg_batch_time"] = avg_batch_time;
  j["n_cpu_trained"] = n_cpu_trained;
  j["n_csd_trained"] = n_csd_trained;
  j["wasted_csd_batches"] = wasted_csd_batches;
  j["cpu_busy_preprocess_time"] = cpu_busy_preprocess_time;
  j["csd_busy_time"] = csd_busy_time;
  j["energy_joules"] = energy_joules;
  j["cost_dollars"] = cost_dollars;
  j["energy_joules_per_batch"] = energy_joules_per_batch;
  j["cost_dollars_total"] = cost_dollars;  // alias of cost_dollars by construction
  j["host_usage_seconds_per_batch"] = host_usage_seconds_per_batch;
  j["policy"] = policy;
  j["epochs"] = epochs;
  j["n_batches"] = n_batches;
  j["degraded"] = degraded;
  return j.dump(2) + "\n";
}

RunReport RunReport::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  RunReport r;
  r.makespan = j.at("makespan").get<double>();
  r.avg_batch_time = j.at("avg_batch_time").get<double>();
  r.n_cpu_trained = j.at("n_cpu_trained").get<std::uint64_t>();
  r.n_csd_trained = j.at("n_csd_trained").get<std::uint64_t>();
  r.wasted_csd_batches = j.at("wasted_csd_batches").get<std::uint64_t>();
  r.cpu_busy_preprocess_time = j.at("cpu_busy_preprocess_time").get<double>();
  r.csd_busy_time = j.at("csd_busy_time").get<double>();
  r.energy_joules = j.at("energy_joules").get<double>();
  r.cost_dollars = j.at("cost_dollars").get<double>();
  r.energy_joules_per_batch = j.value("energy_joules_per_batch", 0.0);
  r.host_usage_seconds_per_batch = j.value("host_usage_seconds_per_batch", 0.0);
  r.policy = j.value("policy", std::string{});
  r.epochs = j.value("epochs", 1u);
  r.n_batches = j.value("n_batches", std::uint64_t{0});
  r.degraded = j.value("degraded", false);
  return r;
}

RunReport build_report(const Trace& trace, std::uint64_t n_batches, std::uint32_t epochs,
                       const std::string& policy) {
  if (n_batches == 0 || epochs == 0) throw std::invalid_argument("build_report: empty run");
  RunReport r;
  r.policy = policy;
  r.epochs = epochs;
  r.n_batches = n_batches;

  std::vector<std::unordered_set<std::uint64_t>> consumed(epochs);
  std::vector<std::uint64_t> cpu_count(epochs, 0), gds_count(epochs, 0);
  Micros cpu_busy = 0, csd_busy = 0;
  std::uint64_t csd_started = 0;
  for (const auto& ev : trace.events) {
    if (ev.epoch >= epochs) throw std::runtime_error("build_report: event epoch out of range");
    switch (ev.source) {
      case SourceTag::CsdPre:
        csd_busy += ev.t_end - ev.t_start;
        ++csd_started;
        break;
      case SourceTag::CpuPath:
      case SourceTag::GdsPath: {
        if (!consumed[ev.epoch].insert(ev.batch_index).second)
          throw std::runtime_error("build_report: batch consumed twice in one epoch");
        if (ev.source == SourceTag::CpuPath) {
          cpu_busy += ev.t_end - ev.t_start;
          ++cpu_count[ev.epoch];
        } else {
          ++gds_count[ev.epoch];
        }
        break;
      }
    }
  }
  std::uint64_t gds_total = 0;
  for (std::uint32_t e = 0; e < epochs; ++e) {
    if (consumed[e].size() != n_batches)
      throw std::runtime_error("build_report: epoch " + std::to_string(e) +
                               " consumed " + std::to_string(consumed[e].size()) + " of " +
                               std::to_string(n_batches) + " batches");
    gds_total += gds_count[e];
  }
  if (gds_total > csd_started)
    throw std::runtime_error("build_report: staged consumption without a staging event");

  r.makespan = micros_to_seconds(trace.makespan());
  r.avg_batch_time = r.makespan / (static_cast<double>(n_batches) * epochs);
  r.n_cpu_trained = cpu_count[0];
  r.n_csd_trained = gds_count[0];
  r.wasted_csd_batches = csd_started - gds_total;
  r.cpu_busy_preprocess_time = micros_to_seconds(cpu_busy);
  r.csd_busy_time = micros_to_seconds(csd_busy);
  return r;
}

}  // namespace ddlp
