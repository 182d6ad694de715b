#include "das/eval/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "das/attribution/methods.hpp"

namespace das::eval {
namespace {

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string scores_csv(const ddpm::Dataset& train, const std::vector<Target>& targets,
                       const std::vector<ScoreTable>& tables) {
  std::ostringstream out;
  out << "target_id,train_id,method,lambda,score,rank\n";
  for (const auto& table : tables) {
    for (std::size_t j = 0; j < targets.size(); ++j) {
      const Eigen::VectorXd col = table.scores.col(static_cast<Eigen::Index>(j));
      const auto r = attribution::ranks(col);
      for (std::size_t i = 0; i < train.size(); ++i) {
        out << targets[j].id << ',' << train.points[i].id << ',' << table.method << ','
            << format_double(table.lambda) << ',' << format_double(col[static_cast<Eigen::Index>(i)]) << ',' << r[i]
            << '\n';
      }
    }
  }
  return out.str();
}

std::string lds_csv(const std::vector<LdsReport>& reports) {
  std::ostringstream out;
  out << "method,lambda,mean_lds,std,sem,targets,degenerate\n";
  for (const auto& r : reports) {
    out << r.method << ',' << format_double(r.lambda) << ',' << format_double(r.summary.mean) << ','
        << format_double(r.summary.stddev) << ',' << format_double(r.summary.sem) << ',' << r.per_target.size() << ','
        << r.degenerate_count() << '\n';
  }
  return out.str();
}

std::string lds_targets_csv(const std::vector<LdsReport>& reports) {
  std::ostringstream out;
  out << "method,lambda,target_index,lds,degenerate\n";
  for (const auto& r : reports) {
    for (std::size_t j = 0; j < r.per_target.size(); ++j) {
      out << r.method << ',' << format_double(r.lambda) << ',' << j << ',' << format_double(r.per_target[j]) << ','
          << static_cast<int>(r.degenerate[j]) << '\n';
    }
  }
  return out.str();
}

std::string sweep_csv(const std::vector<LambdaSweep>& sweeps) {
  std::ostringstream out;
  out << "method,lambda,tuning_lds,selected\n";
  for (const auto& s : sweeps) {
    for (std::size_t i = 0; i < s.lambdas.size(); ++i) {
      out << s.method << ',' << format_double(s.lambdas[i]) << ',' << format_double(s.tuning_lds[i]) << ','
          << (s.lambdas[i] == s.best ? 1 : 0) << '\n';
    }
  }
  return out.str();
}

std::string lds_svg(const std::vector<LdsReport>& reports, const std::string& title) {
  constexpr int kLabel = 170;
  constexpr int kPlot = 420;
  constexpr int kRow = 24;
  constexpr int kTop = 40;
  const int height = kTop + kRow * static_cast<int>(reports.size()) + 40;
  const int width = kLabel + kPlot + 80;

  double lo = 0.0;
  double hi = 0.0;
  for (const auto& r : reports) {
    lo = std::min(lo, r.summary.mean - r.summary.sem);
    hi = std::max(hi, r.summary.mean + r.summary.sem);
  }
  if (hi - lo < 1e-12) hi = lo + 1.0;
  const auto x = [&](double v) { return kLabel + (v - lo) / (hi - lo) * kPlot; };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"10\" y=\"22\" font-size=\"14\">" << escape_xml(title) << "</text>\n";
  const double zero = x(0.0);
  out << "<line x1=\"" << fixed(zero, 1) << "\" y1=\"" << kTop - 6 << "\" x2=\"" << fixed(zero, 1) << "\" y2=\""
      << height - 30 << "\" stroke=\"#444\"/>\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    const int y = kTop + kRow * static_cast<int>(i);
    const double a = std::min(zero, x(r.summary.mean));
    const double b = std::max(zero, x(r.summary.mean));
    out << "<text x=\"" << kLabel - 6 << "\" y=\"" << y + 14 << "\" text-anchor=\"end\">" << escape_xml(r.method)
        << "</text>\n";
    out << "<rect x=\"" << fixed(a, 1) << "\" y=\"" << y + 3 << "\" width=\"" << fixed(b - a, 1)
        << "\" height=\"" << kRow - 8 << "\" fill=\"#4c72b0\"/>\n";
    const double e0 = x(r.summary.mean - r.summary.sem);
    const double e1 = x(r.summary.mean + r.summary.sem);
    out << "<line x1=\"" << fixed(e0, 1) << "\" y1=\"" << y + 11 << "\" x2=\"" << fixed(e1, 1) << "\" y2=\"" << y + 11
        << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << fixed(std::max(b, e1) + 6, 1) << "\" y=\"" << y + 14 << "\">" << fixed(r.summary.mean, 3)
        << "</text>\n";
  }
  out << "<text x=\"" << kLabel << "\" y=\"" << height - 10 << "\">" << fixed(lo, 2) << "</text>\n";
  out << "<text x=\"" << kLabel + kPlot << "\" y=\"" << height - 10 << "\" text-anchor=\"end\">" << fixed(hi, 2)
      << "</text>\n";
  out << "</svg>\n";
  return out.str();
}

std::string counterfactual_csv(const std::vector<CounterfactualRow>& rows) {
  std::ostringstream out;
  out << "method,target,l2,cosine\n";
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < r.l2.size(); ++j) {
      out << r.method << ',' << j << ',' << format_double(r.l2[j]) << ',' << format_double(r.cosine[j]) << '\n';
    }
    out << r.method << ",mean," << format_double(r.mean_l2) << ',' << format_double(r.mean_cosine) << '\n';
  }
  return out.str();
}

std::string output_function_csv(const OutputFunctionReport& report) {
  std::ostringstream out;
  out << "pair,l2,loss_diff,output_diff\n";
  for (std::size_t j = 0; j < report.l2.size(); ++j) {
    out << j << ',' << format_double(report.l2[j]) << ',' << format_double(report.loss_diff[j]) << ','
        << format_double(report.output_diff[j]) << '\n';
  }
  out << "pearson_vs_l2,," << (report.degenerate_loss ? "undefined" : format_double(report.pearson_loss)) << ','
      << (report.degenerate_output ? "undefined" : format_double(report.pearson_output)) << '\n';
  return out.str();
}

std::string output_function_svg(const OutputFunctionReport& report) {
  constexpr int kSize = 260;
  constexpr int kPad = 40;
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 2 * (kSize + 2 * kPad) << "\" height=\""
      << kSize + 2 * kPad + 20 << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const auto panel = [&](int offset, const std::vector<double>& ys, const std::string& name, double r, bool degenerate) {
    const auto [xlo, xhi] = std::minmax_element(report.l2.begin(), report.l2.end());
    const auto [ylo, yhi] = std::minmax_element(ys.begin(), ys.end());
    const double xs = *xhi - *xlo > 0 ? *xhi - *xlo : 1.0;
    const double ysc = *yhi - *ylo > 0 ? *yhi - *ylo : 1.0;
    out << "<g transform=\"translate(" << offset + kPad << "," << kPad << ")\">\n";
    out << "<rect width=\"" << kSize << "\" height=\"" << kSize << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (std::size_t j = 0; j < ys.size(); ++j) {
      out << "<circle cx=\"" << fixed((report.l2[j] - *xlo) / xs * kSize, 1) << "\" cy=\""
          << fixed(kSize - (ys[j] - *ylo) / ysc * kSize, 1) << "\" r=\"3\" fill=\"#dd8452\"/>\n";
    }
    out << "<text x=\"0\" y=\"-8\">" << name << " (r = " << (degenerate ? std::string("undefined") : fixed(r, 3))
        << ")</text>\n";
    out << "<text x=\"" << kSize / 2 << "\" y=\"" << kSize + 18 << "\" text-anchor=\"middle\">L2 distance</text>\n";
    out << "</g>\n";
  };
  if (!report.l2.empty()) {
    panel(0, report.loss_diff, "loss difference", report.pearson_loss, report.degenerate_loss);
    panel(kSize + 2 * kPad, report.output_diff, "output difference", report.pearson_output, report.degenerate_output);
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace das::eval
