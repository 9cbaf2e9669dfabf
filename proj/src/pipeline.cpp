#include "pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <numeric>

#include "metrics.hpp"
#include "tensor_io.hpp"
#include "uncertainty.hpp"

namespace voxseed {

namespace {

constexpr const char* kManifestFormat = "voxseed-manifest";
constexpr int kManifestVersion = 1;
constexpr std::uint64_t kPseudolabelTag = 0x70736c62;

std::string vol_name(int id) { return "case_" + std::to_string(id) + "_vol.vv1"; }
std::string mask_name(int id) { return "case_" + std::to_string(id) + "_mask.vv1"; }

std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

nlohmann::json parse_json_file(const fs::path& path) {
    try {
        return nlohmann::json::parse(read_text(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("malformed JSON in '" + path.string() + "': " + e.what());
    }
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

nlohmann::json case_entry(const Case& c) {
    nlohmann::json j{{"id", c.id}, {"seed", c.seed}, {"volume", vol_name(c.id)}, {"spec", c.spec}};
    j["mask"] = c.mask ? nlohmann::json(mask_name(c.id)) : nlohmann::json(nullptr);
    return j;
}

template <class Split>
auto* split_by_name(Split& data, const std::string& split) {
    using Cases = std::conditional_t<std::is_const_v<Split>, const std::vector<Case>, std::vector<Case>>;
    if (split == "labeled") return &data.labeled;
    if (split == "unlabeled") return &data.unlabeled;
    if (split == "validation") return &data.validation;
    if (split == "test") return &data.test;
    return static_cast<Cases*>(nullptr);
}

const Case* find_case(const DatasetSplit& data, int id) {
    for (const auto* split : {&data.labeled, &data.unlabeled, &data.validation, &data.test}) {
        for (const auto& c : *split) {
            if (c.id == id) return &c;
        }
    }
    return nullptr;
}

}  // namespace

fs::path gen_data(const GenDataOptions& o) {
    DatasetSplit split = make_dataset(o.n_train, o.n_labeled, o.n_val, o.n_test, o.ranges, o.seed);
    ensure_dir(o.out);
    nlohmann::json splits;
    for (const auto& [name, cases] : {std::pair{"labeled", &split.labeled}, std::pair{"unlabeled", &split.unlabeled},
                                      std::pair{"validation", &split.validation}, std::pair{"test", &split.test}}) {
        auto arr = nlohmann::json::array();
        for (const auto& c : *cases) {
            save_volume(o.out / vol_name(c.id), c.volume);
            if (c.mask) save_mask(o.out / mask_name(c.id), *c.mask, c.volume.spacing);
            arr.push_back(case_entry(c));
        }
        splits[name] = arr;
    }
    nlohmann::json manifest{{"format", kManifestFormat},
                            {"version", kManifestVersion},
                            {"seed", o.seed},
                            {"counts", {{"train", o.n_train}, {"labeled", o.n_labeled}, {"validation", o.n_val},
                                        {"test", o.n_test}}},
                            {"ranges", o.ranges},
                            {"splits", splits}};
    const fs::path path = o.out / "manifest.json";
    write_text(path, manifest.dump(2) + "\n");
    return path;
}

DatasetSplit load_manifest(const fs::path& path) {
    const nlohmann::json m = parse_json_file(path);
    const std::string where = "manifest '" + path.string() + "'";
    DatasetSplit out;
    try {
        if (m.at("format").get<std::string>() != kManifestFormat) throw FormatError(where + ": unrecognised format");
        if (m.at("version").get<int>() != kManifestVersion) throw FormatError(where + ": unsupported version");
        const fs::path dir = path.parent_path();
        const auto& splits = m.at("splits");
        for (const auto& name : {"labeled", "unlabeled", "validation", "test"}) {
            auto* cases = split_by_name(out, name);
            for (const auto& e : splits.at(name)) {
                Case c;
                c.id = e.at("id").get<int>();
                c.seed = e.at("seed").get<std::uint64_t>();
                c.spec = e.at("spec").get<PhantomSpec>();
                c.volume = load_volume(dir / e.at("volume").get<std::string>());
                if (!e.at("mask").is_null()) {
                    c.mask = load_mask(dir / e.at("mask").get<std::string>());
                    require_same_dims(c.mask->dims, c.volume.dims, "manifest case mask");
                }
                cases->push_back(std::move(c));
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(where + ": " + e.what());
    }
    for (const auto* split : {&out.labeled, &out.validation, &out.test}) {
        for (const auto& c : *split) {
            if (!c.mask) throw FormatError(where + ": case " + std::to_string(c.id) + " needs a mask");
        }
    }
    return out;
}

TrainConfig load_train_config(const fs::path& path) {
    auto config = parse_json_file(path).get<TrainConfig>();
    config.validate();
    return config;
}

FitResult run_train(const TrainConfig& config, const DatasetSplit& data, const fs::path& out_dir,
                    const LineSink& progress) {
    config.validate();
    ensure_dir(out_dir);
    const fs::path log_path = out_dir / "log.jsonl";
    std::ofstream log(log_path, std::ios::binary | std::ios::trunc);
    if (!log) throw IoError("cannot open '" + log_path.string() + "' for writing");
    write_text(out_dir / "config.json", nlohmann::json(config).dump(2) + "\n");

    FitResult result = fit(config, data, [&](const std::string& line) {
        log << line << '\n';
        if (progress && line.find("\"epoch\"") != std::string::npos) progress(line);
    });
    log.flush();
    if (!log) throw IoError("write failed for '" + log_path.string() + "'");
    save_checkpoint(out_dir / "best.vck1", result.best);
    save_checkpoint(out_dir / "final.vck1", result.last);
    if (result.divergence) throw TrainingDivergence(*result.divergence);
    return result;
}

std::vector<CaseScore> run_eval(const fs::path& checkpoint, const DatasetSplit& data, const std::string& split,
                                const fs::path& out_csv, const LineSink& lines) {
    const auto* cases = split_by_name(data, split);
    if (!cases || split == "unlabeled") {
        throw InvalidArgument("unknown split '" + split + "' (expected labeled, validation or test)");
    }
    if (cases->empty()) throw InvalidArgument("split '" + split + "' is empty");
    const Checkpoint ck = load_checkpoint(checkpoint);
    const auto scores = score_cases(ck.teacher, *cases);
    std::string csv = "case_id,iou,hd95_mm,empty_prediction\n";
    for (const auto& s : scores) {
        csv += std::to_string(s.id) + "," + fmt(s.iou) + "," + fmt(s.hd95) + "," + (s.empty_prediction ? "1" : "0") +
               "\n";
    }
    if (out_csv.has_parent_path()) ensure_dir(out_csv.parent_path());
    write_text(out_csv, csv);
    if (lines) {
        double iou_sum = 0.0, hd_sum = 0.0;
        for (const auto& s : scores) {
            lines(nlohmann::json{{"case_id", s.id}, {"iou", s.iou}, {"hd95_mm", s.hd95},
                                 {"empty_prediction", s.empty_prediction}}.dump());
            iou_sum += s.iou;
            hd_sum += s.hd95;
        }
        const double n = static_cast<double>(scores.size());
        lines(nlohmann::json{{"split", split}, {"cases", scores.size()}, {"mean_iou", iou_sum / n},
                             {"mean_hd95_mm", hd_sum / n}}.dump());
    }
    return scores;
}

double AblationRow::mean_iou() const {
    return iou.empty() ? 0.0 : std::accumulate(iou.begin(), iou.end(), 0.0) / iou.size();
}

double AblationRow::mean_hd95() const {
    return hd95.empty() ? 0.0 : std::accumulate(hd95.begin(), hd95.end(), 0.0) / hd95.size();
}

std::vector<AblationRow> run_ablate(const TrainConfig& base, const DatasetSplit& data,
                                    const std::vector<std::uint64_t>& seeds, const fs::path& out_dir,
                                    const LineSink& progress) {
    if (seeds.empty()) throw InvalidArgument("ablate needs at least one seed");
    if (data.test.empty()) throw InvalidArgument("ablate needs a nonempty test split");
    std::vector<AblationRow> rows{{"baseline", false, false, false, {}, {}},
                                  {"UA", true, false, false, {}, {}},
                                  {"UA+NN", true, true, false, {}, {}},
                                  {"UA+NN+EN", true, true, true, {}, {}},
                                  {"UA+EN", true, false, true, {}, {}}};
    ensure_dir(out_dir);
    std::string runs_csv = "row,seed,iou,hd95_mm\n";
    for (auto& row : rows) {
        for (const auto seed : seeds) {
            TrainConfig cfg = base;
            cfg.seed = seed;
            cfg.semi_supervised = row.semi_supervised;
            cfg.use_nn = row.use_nn;
            cfg.use_en = row.use_en;
            const fs::path run_dir = out_dir / (row.name + "_seed" + std::to_string(seed));
            if (progress) progress("{\"row\":\"" + row.name + "\",\"seed\":" + std::to_string(seed) + "}");
            const FitResult fit_result = run_train(cfg, data, run_dir, progress);
            const auto scores = score_cases(fit_result.best.teacher, data.test);
            double iou_sum = 0.0, hd_sum = 0.0;
            for (const auto& s : scores) {
                iou_sum += s.iou;
                hd_sum += s.hd95;
            }
            row.iou.push_back(iou_sum / scores.size());
            row.hd95.push_back(hd_sum / scores.size());
            runs_csv += row.name + "," + std::to_string(seed) + "," + fmt(row.iou.back()) + "," +
                        fmt(row.hd95.back()) + "\n";
        }
    }
    std::string csv = "row,iou,hd95_mm\n";
    for (const auto& row : rows) csv += row.name + "," + fmt(row.mean_iou()) + "," + fmt(row.mean_hd95()) + "\n";
    write_text(out_dir / "ablation.csv", csv);
    write_text(out_dir / "ablation_runs.csv", runs_csv);
    return rows;
}

void run_pseudolabel(const fs::path& checkpoint, const DatasetSplit& data, int case_id, const fs::path& out_dir,
                     const PseudolabelOptions& options) {
    const TrainConfig& cfg = options.config;
    cfg.validate();
    const Case* target = find_case(data, case_id);
    if (!target) throw InvalidArgument("no case with id " + std::to_string(case_id) + " in the manifest");
    if (data.labeled.empty()) throw InvalidArgument("manifest has no labeled case to take embeddings from");
    const Case* ref = &data.labeled.front();
    if (options.reference_id) {
        ref = find_case(data, *options.reference_id);
        if (!ref || !ref->mask) {
            throw InvalidArgument("reference case " + std::to_string(*options.reference_id) + " is not labeled");
        }
    }
    const Checkpoint ck = load_checkpoint(checkpoint);
    ensure_dir(out_dir);

    Rng rng = derive_rng(cfg.seed, {kPseudolabelTag, static_cast<std::uint64_t>(case_id)});
    const Spacing& sp = target->volume.spacing;
    const McResult mc = mc_uncertainty(ck.teacher, target->volume, cfg.mc_passes, cfg.teacher_noise, rng);
    const double lambda = uncertainty_threshold(ck.iteration, std::max<std::int64_t>(1, ck.total_iterations));
    const Mask3D reliable = reliability_mask(mc.entropy, lambda);

    const Volume3D noisy_ref = add_gaussian_noise(ref->volume, cfg.teacher_noise, rng);
    const auto teacher_ref = forward(ck.teacher, noisy_ref, Mode::eval, rng, false);
    const auto student = forward(ck.student, target->volume, Mode::eval, rng, false);
    const auto ens = ensemble_similarity(*ref->mask, teacher_ref.penultimate, student.penultimate, cfg.k, cfg.runs,
                                         cfg.band, cfg.kernel, rng);

    RawTensor lambda_raw;
    lambda_raw.dtype = DType::f32;
    lambda_raw.dims = {1};
    lambda_raw.spacing = sp;
    lambda_raw.f32 = {static_cast<float>(lambda)};

    write_vv1(out_dir / "entropy.vv1", to_raw(mc.entropy, sp));
    write_vv1(out_dir / "lambda.vv1", lambda_raw);
    write_vv1(out_dir / "reliable.vv1", to_raw(reliable, sp));
    write_vv1(out_dir / "pseudo_teacher.vv1", to_raw(mc.pseudo, sp));
    write_vv1(out_dir / "k_plus.vv1", to_raw(ens.k_plus, sp));
    write_vv1(out_dir / "k_minus.vv1", to_raw(ens.k_minus, sp));
    write_vv1(out_dir / "pseudo_nn.vv1", to_raw(pseudo_label_nn(ens.k_plus, ens.k_minus), sp));
}

}  // namespace voxseed
