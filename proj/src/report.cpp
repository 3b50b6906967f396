#include "gridnum/report.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "gridnum/format.hpp"

namespace gridnum {

std::string to_string(StopReason r) {
  switch (r) {
    case StopReason::kkt:
      return "kkt";
    case StopReason::step:
      return "step";
    case StopReason::max_iters:
      return "max_iters";
  }
  return "unknown";
}

void TrajectoryLog::push(const IterateRecord& rec) {
  IterateRecord r = rec;
  best_ = std::max(best_, r.objective);
  r.best_objective = best_;
  if (seen_++ % stride_ != 0) return;
  records_.push_back(r);
  if (records_.size() >= capacity_) {
    std::vector<IterateRecord> thinned;
    thinned.reserve(capacity_ / 2 + 1);
    for (std::size_t k = 0; k < records_.size(); k += 2) thinned.push_back(records_[k]);
    records_ = std::move(thinned);
    stride_ *= 2;
  }
}

void TrajectoryLog::push_final(const IterateRecord& rec) {
  IterateRecord r = rec;
  best_ = std::max(best_, r.objective);
  r.best_objective = best_;
  records_.push_back(r);
}

void write_report_csv(std::ostream& out, const ConvergenceReport& rep, bool with_spot) {
  out << "iter,objective,kkt";
  if (with_spot) out << ",spot_g,spot_price";
  out << '\n';
  for (const auto& r : rep.iterates) {
    out << r.iter << ',' << fmt_fixed(r.objective) << ',' << fmt_num(r.kkt);
    if (with_spot) out << ',' << fmt_num(r.spot_g) << ',' << fmt_num(r.spot_price);
    out << '\n';
  }
}

namespace {

struct Series {
  std::string name;
  std::string color;
  std::vector<double> values;
};

void emit_polyline(std::ostream& out, const std::vector<int>& iters, const Series& s, double x0, double y0,
                   double w, double h) {
  double lo = INFINITY;
  double hi = -INFINITY;
  for (double v : s.values)
    if (std::isfinite(v)) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (!std::isfinite(lo)) {
    lo = 0.0;
    hi = 1.0;
  }
  if (hi - lo < 1e-300) hi = lo + 1.0;
  const double imax = iters.empty() ? 1.0 : std::max(1, iters.back());
  out << "  <polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
  for (std::size_t k = 0; k < iters.size(); ++k) {
    const double v = std::isfinite(s.values[k]) ? s.values[k] : lo;
    const double px = x0 + w * iters[k] / imax;
    const double py = y0 + h * (1.0 - (v - lo) / (hi - lo));
    out << fmt_fixed(px, 2) << ',' << fmt_fixed(py, 2) << (k + 1 < iters.size() ? " " : "");
  }
  out << "\"/>\n";
  out << "  <text x=\"" << fmt_fixed(x0, 1) << "\" y=\"" << fmt_fixed(y0 - 6, 1) << "\" font-size=\"12\" fill=\""
      << s.color << "\">" << s.name << " [" << fmt_num(lo) << ", " << fmt_num(hi) << "]</text>\n";
}

std::string xml_escape(const std::string& in) {
  std::string out;
  for (char c : in) {
    switch (c) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

}  // namespace

void write_convergence_svg(std::ostream& out, const ConvergenceReport& rep, const std::string& title) {
  std::vector<int> iters;
  Series obj{"objective", "#1f77b4", {}};
  Series kkt{"log10(kkt)", "#d62728", {}};
  for (const auto& r : rep.iterates) {
    iters.push_back(r.iter);
    obj.values.push_back(r.objective);
    kkt.values.push_back(r.kkt > 0.0 ? std::log10(r.kkt) : NAN);
  }
  const double W = 640;
  const double H = 480;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
      << ' ' << H << "\">\n";
  out << "  <rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  out << "  <text x=\"20\" y=\"22\" font-size=\"14\">" << xml_escape(title) << "</text>\n";
  emit_polyline(out, iters, obj, 50, 60, 560, 160);
  emit_polyline(out, iters, kkt, 50, 280, 560, 160);
  out << "</svg>\n";
}

}  // namespace gridnum
