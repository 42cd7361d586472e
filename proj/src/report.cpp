#include "fedsim/report.hpp"

#include <cstdio>
#include <fstream>

#include "fedsim/errors.hpp"
#include "fedsim/version.hpp"

namespace fedsim {

std::string format_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

namespace {

class CsvFile {
public:
    CsvFile(const std::filesystem::path& path, const std::string& header) : path_(path) {
        out_.open(path);
        if (!out_) throw IoError("cannot write " + path.string());
        out_ << header << '\n';
    }

    template <typename... Cells>
    void row(const Cells&... cells) {
        bool first = true;
        ((out_ << (first ? "" : ","), first = false, put(cells)), ...);
        out_ << '\n';
    }

    void close() {
        out_.close();
        if (!out_) throw IoError("failed writing " + path_.string());
    }

private:
    void put(int v) { out_ << v; }
    void put(double v) { out_ << format_number(v); }

    std::filesystem::path path_;
    std::ofstream out_;
};

}  // namespace

void emit_results(const ExperimentResult& result, const RunManifest& manifest) {
    std::error_code ec;
    std::filesystem::create_directories(manifest.out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + manifest.out_dir.string());

    CsvFile rounds(manifest.out_dir / "rounds.csv",
                   "replication,round,test_error,flip_success_count");
    for (const ReplicationResult& rep : result.replications) {
        for (const RoundRecord& r : rep.rounds) {
            rounds.row(rep.replication, r.round, r.test_error, r.flip_success);
        }
    }
    rounds.close();

    CsvFile detector(manifest.out_dir / "detector.csv",
                     "replication,interval,agent,delta_u,decision,vote_mean,trusted");
    for (const ReplicationResult& rep : result.replications) {
        for (const IntervalRecord& r : rep.intervals) {
            detector.row(rep.replication, r.interval, r.agent, r.mean_stat, r.decision,
                         r.vote_mean, r.trusted ? 1 : 0);
        }
    }
    detector.close();

    CsvFile quantiles(manifest.out_dir / "quantiles.csv", "round,q10,q50,q90");
    for (std::size_t t = 0; t < result.q50.size(); ++t) {
        quantiles.row(static_cast<int>(t), result.q10[t], result.q50[t], result.q90[t]);
    }
    quantiles.close();

    nlohmann::ordered_json doc;
    doc["version"] = kVersion;
    doc["master_seed"] = manifest.config.master_seed;
    doc["outputs"] = {{"rounds", "rounds.csv"},
                      {"detector", "detector.csv"},
                      {"quantiles", "quantiles.csv"}};
    doc["config"] = config_to_json(manifest.config);
    const std::filesystem::path manifest_path = manifest.out_dir / "manifest.json";
    std::ofstream out(manifest_path);
    if (!out) throw IoError("cannot write " + manifest_path.string());
    out << doc.dump(2) << '\n';
    out.close();
    if (!out) throw IoError("failed writing " + manifest_path.string());
}

ExperimentConfig parse_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path.string());
    nlohmann::ordered_json doc;
    try {
        doc = nlohmann::ordered_json::parse(in);
    } catch (const nlohmann::ordered_json::parse_error& e) {
        throw ParseError("manifest " + path.string() + ": " + e.what());
    }
    if (!doc.contains("config")) {
        throw ParseError("manifest " + path.string() + ": missing \"config\"");
    }
    return config_from_json(doc.at("config"));
}

}  // namespace fedsim
