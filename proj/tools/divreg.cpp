#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "divreg/constraint.hpp"
#include "divreg/error.hpp"
#include "divreg/flow.hpp"
#include "divreg/io.hpp"
#include "divreg/phantom.hpp"
#include "divreg/solver.hpp"

using namespace divreg;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Exit codes.
constexpr int exit_ok = 0;
constexpr int exit_max_iterations = 2;
constexpr int exit_line_search = 3;
constexpr int exit_internal = 10;
constexpr int exit_parse = 11;
constexpr int exit_usage = 12;
constexpr int exit_geometry = 13;
constexpr int exit_solver = 14;
constexpr int exit_other = 15;

struct UsageError : Error {
    using Error::Error;
};

void require_input(const std::string &path, const char *what) {
    if (!fs::is_regular_file(path)) throw ParseError(std::string(what) + " '" + path + "' does not exist or is not a file");
}

void require_output(const std::string &path) {
    const fs::path parent = fs::absolute(path).parent_path();
    if (!fs::is_directory(parent)) throw UsageError("output directory '" + parent.string() + "' does not exist");
}

void emit(bool as_json, const json &summary, const std::string &text) {
    if (as_json)
        std::cout << summary.dump(2) << '\n';
    else
        std::cout << text;
}

Interpolation parse_interp(const std::string &s) {
    if (s == "cubic") return Interpolation::cubic;
    if (s == "trilinear") return Interpolation::trilinear;
    throw UsageError("unknown interpolation '" + s + "'");
}

EulerConfig euler_config(int steps, int threads) {
    EulerConfig e;
    e.steps = steps;
    e.threads = threads;
    e.validate();
    return e;
}

struct RegisterArgs {
    std::string fixed, moving, mask, out, report;
    bool unconstrained = false, classical = false;
    std::string similarity = "nmi", interp = "cubic", gradient = "exact";
    double sim_weight = 0.95, bend_weight = 0.05, grid_spacing = 5.0, lncc_sigma = 5.0, grad_tol = 1e-6;
    int levels = 3, steps = 64, max_iter = 100, nmi_bins = 64, parzen = 3, threads = 0;
};

int cmd_register(const RegisterArgs &a, bool as_json) {
    require_input(a.fixed, "fixed image");
    require_input(a.moving, "moving image");
    const bool constrained = !a.unconstrained && !a.classical;
    if (constrained && a.mask.empty()) throw UsageError("--mask is required unless --unconstrained or --classical is given");
    if (!a.mask.empty()) require_input(a.mask, "mask");
    require_output(a.out);
    const std::string report_path = a.report.empty() ? a.out + ".report.json" : a.report;
    require_output(report_path);

    ObjectiveConfig obj;
    obj.similarity = parse_similarity(a.similarity);
    obj.similarity_weight = a.sim_weight;
    obj.bending_weight = a.bend_weight;
    obj.lncc_sigma_mm = a.lncc_sigma;
    obj.nmi_bins = a.nmi_bins;
    obj.parzen_order = a.parzen;
    obj.interpolation = parse_interp(a.interp);
    if (a.gradient == "exact")
        obj.gradient = GradientMode::exact_adjoint;
    else if (a.gradient == "endpoint")
        obj.gradient = GradientMode::endpoint;
    else
        throw UsageError("unknown gradient mode '" + a.gradient + "'");
    obj.threads = a.threads;
    obj.validate();
    SolverConfig solver;
    solver.pyramid_levels = a.levels;
    solver.max_iterations = a.max_iter;
    solver.gradient_tolerance = a.grad_tol;
    solver.validate();
    PyramidSetup setup;
    setup.grid_spacing = a.grid_spacing;
    setup.constrained = constrained;
    setup.classical = a.classical;
    setup.euler = euler_config(a.steps, a.threads);

    const Image3D fixed = read_nifti(a.fixed);
    const Image3D moving = read_nifti(a.moving);
    std::optional<MaskRegion> mask;
    if (!a.mask.empty()) mask = read_mask(a.mask);

    const RegistrationResult r = register_pyramid(moving, fixed, mask ? &*mask : nullptr, obj, solver, setup);
    write_svf_with_sidecar(r.field, a.out);
    {
        std::ofstream rep(report_path);
        if (!rep) throw ParseError("cannot write report '" + report_path + "'");
        rep << registration_report_json(r.report) << '\n';
    }
    if (r.report.degenerate_similarity)
        std::cerr << "warning: the similarity measure hit its entropy floor (degenerate joint histogram) during the run\n";

    double peak = 0.0;
    for (double x : r.field.parameters()) peak = std::max(peak, std::abs(x));
    const int code = r.report.reason == StopReason::max_iterations        ? exit_max_iterations
                     : r.report.reason == StopReason::line_search_failure ? exit_line_search
                                                                          : exit_ok;
    if (code == exit_line_search) std::cerr << "warning: line search failed; the best iterate was returned\n";
    const auto &last = r.report.levels.back().solver;
    json s = {{"command", "register"},
              {"svf", a.out},
              {"report", report_path},
              {"reason", to_string(r.report.reason)},
              {"final_objective", last.final_objective},
              {"final_residual", r.report.final_residual},
              {"max_abs_coefficient", peak},
              {"parameters", r.field.parameter_count()},
              {"constraints", r.report.levels.back().constraints},
              {"seconds", r.report.seconds},
              {"exit_code", code}};
    std::ostringstream t;
    t << "stop: " << to_string(r.report.reason) << "\nfinal objective: " << last.final_objective
      << "\nconstraint residual: " << r.report.final_residual << "\nwrote " << a.out << " and " << report_path << '\n';
    emit(as_json, s, t.str());
    return code;
}

struct ExpArgs {
    std::string svf, reference, out, jacobian, mask;
    bool log_jacobian = false;
    int steps = 64, threads = 0;
};

int cmd_exp(const ExpArgs &a, bool as_json) {
    require_input(a.svf, "SVF");
    require_input(a.reference, "reference image");
    if (!a.mask.empty()) require_input(a.mask, "mask");
    if (a.out.empty() && a.jacobian.empty()) throw UsageError("nothing to write: give --out and/or --jacobian");
    if (!a.out.empty()) require_output(a.out);
    if (!a.jacobian.empty()) require_output(a.jacobian);
    const EulerConfig e = euler_config(a.steps, a.threads);
    const SplineSVF field = read_svf(a.svf);
    const VoxelGeometry g = read_nifti_header(a.reference).geometry;
    std::optional<MaskRegion> mask;
    if (!a.mask.empty()) {
        mask = read_mask(a.mask);
        if (!same_frame(mask->geometry(), g)) throw GeometryError("mask and reference image differ in geometry");
    }

    json s = {{"command", "exp"}, {"steps", a.steps}};
    std::ostringstream t;
    if (!a.out.empty()) {
        const DeformationField def = exponential_euler(field, e, g);
        write_deformation_nifti(def, a.out);
        s["flagged"] = def.flagged_count();
        t << "wrote " << a.out << " (" << def.flagged_count() << " trajectories left the grid box)\n";
    }
    if (!a.jacobian.empty()) {
        const DeterminantMap det = jacobian_determinant_map(field, e, g);
        const DeterminantStats st = determinant_stats(det.determinant, mask ? &*mask : nullptr);
        Image3D out = a.log_jacobian ? log_determinant(det.determinant) : det.determinant;
        std::size_t replaced = 0;
        for (double &x : out.data())
            if (!std::isfinite(x)) x = 0.0, ++replaced;
        write_nifti(out, a.jacobian);
        s["jacobian"] = {{"path", a.jacobian},
                         {"log", a.log_jacobian},
                         {"mae", st.mae},
                         {"max_abs_dev", st.max_abs_dev},
                         {"min", st.min},
                         {"max", st.max},
                         {"count", st.count},
                         {"excluded", st.excluded},
                         {"non_finite_written_as_zero", replaced},
                         {"in_mask", mask.has_value()}};
        t << "wrote " << a.jacobian << (a.log_jacobian ? " (log-determinant)" : "") << "\nmean |det J - 1|"
          << (mask ? " in mask" : "") << ": " << st.mae << "\nmax |det J - 1|: " << st.max_abs_dev << '\n';
    }
    emit(as_json, s, t.str());
    return exit_ok;
}

int cmd_project(const std::string &svf, const std::string &mask_path, const std::string &out, bool as_json) {
    require_input(svf, "SVF");
    require_output(out);
    const SplineSVF field = read_svf(svf);
    json s = {{"command", "project"}, {"out", out}};
    std::ostringstream t;
    if (field.is_divergence_conforming()) {
        if (mask_path.empty()) throw UsageError("--mask is required to project a divergence-conforming field");
        require_input(mask_path, "mask");
        const MaskRegion mask = read_mask(mask_path);
        const ConstraintSystem sys = assemble_constraints(field.grid(), mask);
        const DivConformingSVF projected = project_divergence_free(DivConformingSVF(field), sys);
        write_svf_with_sidecar(projected, out);
        double moved = 0.0;
        for (std::size_t i = 0; i < field.parameter_count(); ++i)
            moved = std::max(moved, std::abs(projected.parameters()[i] - field.parameters()[i]));
        s["constraints"] = sys.rows();
        s["residual_before"] = sys.max_residual(field.parameters());
        s["residual_after"] = sys.max_residual(projected.parameters());
        s["max_coefficient_change"] = moved;
        t << "projected onto " << sys.rows() << " constraints; residual " << s["residual_before"].get<double>() << " -> "
          << s["residual_after"].get<double>() << "\nwrote " << out << '\n';
    } else {
        // Classical fields use the pointwise knot projection; the mask does not apply.
        const ClassicalSVF projected = project_classical_at_knots(ClassicalSVF(field));
        write_svf_with_sidecar(projected, out);
        s["mode"] = "classical_knots";
        t << "projected the classical field onto zero divergence at its knots\nwrote " << out << '\n';
    }
    emit(as_json, s, t.str());
    return exit_ok;
}

int cmd_divcheck(const std::string &svf, const std::string &mask_path, std::size_t samples, std::uint64_t seed,
                 bool as_json) {
    require_input(svf, "SVF");
    require_input(mask_path, "mask");
    const SplineSVF field = read_svf(svf);
    const MaskRegion mask = read_mask(mask_path);
    std::ostringstream t;
    json s = {{"command", "divcheck"}, {"conforming", field.is_divergence_conforming()}};
    if (field.is_divergence_conforming()) {
        const DivergenceReport r = divergence_check(field, mask, samples, seed);
        s["samples"] = r.samples;
        s["max_abs_divergence"] = r.max_abs_divergence;
        s["max_abs_psi"] = r.max_abs_psi;
        s["active_indices"] = r.active_indices;
        s["bound_holds"] = r.bound_holds();
        t << "max |div v| over " << r.samples << " samples: " << r.max_abs_divergence << "\nmax |psi| over "
          << r.active_indices << " active indices: " << r.max_abs_psi
          << "\nbound holds: " << (r.bound_holds() ? "yes" : "no") << '\n';
    } else {
        // No coefficient bound exists for a classical field; report the sampled maximum only.
        const double peak = sample_max_divergence(field, mask, samples, seed);
        s["samples"] = mask.empty() ? 0 : samples;
        s["max_abs_divergence"] = peak;
        t << "max |div v| over " << s["samples"].get<std::size_t>() << " samples: " << peak
          << "\n(classical field: no coefficient bound)\n";
    }
    emit(as_json, s, t.str());
    return exit_ok;
}

struct SynthArgs {
    std::string kind = "sphere-shells", prefix, gt_kind = "classical";
    std::uint64_t seed = 0;
    int size = 64, steps = 64, threads = 0;
    double spacing = 1.0, smoothing = 1.0, texture = 0.0, mask_fraction = 0.2, amplitude = 0.0, gt_spacing = 5.0;
    bool second_modality = false;
};

int cmd_synth(const SynthArgs &a, bool as_json) {
    if (a.prefix.empty()) throw UsageError("--out-prefix is required");
    require_output(a.prefix + "_fixed.nii");
    if (a.gt_kind != "classical" && a.gt_kind != "conforming") throw UsageError("--gt-kind must be classical or conforming");
    PhantomSpec spec;
    spec.kind = parse_phantom_kind(a.kind);
    spec.size = a.size;
    spec.spacing = a.spacing;
    spec.seed = a.seed;
    spec.smoothing_mm = a.smoothing;
    spec.texture = a.texture;
    spec.second_modality = a.second_modality;
    const Phantom ph = make_phantom(spec);
    const VoxelGeometry g = spec.geometry();
    const Image3D &source = ph.secondary ? *ph.secondary : ph.primary;

    json s = {{"command", "synth"}, {"kind", a.kind}, {"seed", a.seed}};
    write_nifti(ph.primary, a.prefix + "_fixed.nii");
    const MaskRegion mask = central_mask(g, a.mask_fraction);
    write_mask(mask, a.prefix + "_mask.nii");
    s["fixed"] = a.prefix + "_fixed.nii";
    s["mask"] = a.prefix + "_mask.nii";
    s["mask_voxels"] = mask.count();
    if (a.amplitude > 0.0) {
        const ControlGrid grid = ControlGrid::covering(g, a.gt_spacing);
        const EulerConfig e = euler_config(a.steps, a.threads);
        const GroundTruth gt = make_ground_truth_svf(grid, a.seed, a.amplitude, g, e);
        write_svf_with_sidecar(gt.classical, a.prefix + "_gt_classical.svf");
        write_svf_with_sidecar(gt.conforming, a.prefix + "_gt_conforming.svf");
        const SplineSVF &v = a.gt_kind == "classical" ? static_cast<const SplineSVF &>(gt.classical)
                                                      : static_cast<const SplineSVF &>(gt.conforming);
        const Image3D moving =
            warp_image(source, exponential_euler(v, e, g), Interpolation::cubic, std::nullopt, Boundary::extend);
        write_nifti(moving, a.prefix + "_moving.nii");
        s["amplitude"] = gt.amplitude;
        s["ground_truth"] = a.gt_kind;
        s["flagged_fraction"] = gt.flagged_fraction;
    } else {
        write_nifti(source, a.prefix + "_moving.nii");
    }
    s["moving"] = a.prefix + "_moving.nii";
    std::ostringstream t;
    t << "wrote " << a.prefix << "_fixed.nii, " << a.prefix << "_moving.nii, " << a.prefix << "_mask.nii";
    if (a.amplitude > 0.0) t << ", " << a.prefix << "_gt_classical.svf, " << a.prefix << "_gt_conforming.svf";
    t << '\n';
    emit(as_json, s, t.str());
    return exit_ok;
}

struct WarpArgs {
    std::string svf, image, points, out, interp = "cubic";
    bool inverse = false;
    int steps = 64, threads = 0;
};

int cmd_warp(const WarpArgs &a, bool as_json) {
    require_input(a.svf, "SVF");
    if (a.image.empty() == a.points.empty()) throw UsageError("give exactly one of --image and --points");
    require_output(a.out);
    const EulerConfig e = euler_config(a.steps, a.threads);
    SplineSVF field = read_svf(a.svf);
    if (a.inverse) field = scaled(field, -1.0);
    json s = {{"command", "warp"}, {"out", a.out}, {"inverse", a.inverse}};
    std::ostringstream t;
    if (!a.image.empty()) {
        require_input(a.image, "image");
        const Image3D img = read_nifti(a.image);
        const DeformationField def = exponential_euler(field, e, img.geometry());
        write_nifti(warp_image(img, def, parse_interp(a.interp)), a.out);
        s["flagged"] = def.flagged_count();
        t << "wrote " << a.out << '\n';
    } else {
        require_input(a.points, "points file");
        std::ifstream in(a.points);
        std::vector<Vec3> pts;
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty() || line[0] == '#') continue;
            for (char &c : line)
                if (c == ',') c = ' ';
            std::istringstream ls(line);
            Vec3 p;
            if (!(ls >> p[0] >> p[1] >> p[2])) {
                if (lineno == 1) continue; // header row
                throw ParseError(a.points + ":" + std::to_string(lineno) + ": expected three coordinates");
            }
            pts.push_back(p);
        }
        const PointTransport tr = warp_points(pts, field, e);
        std::ofstream out(a.out);
        out << "x,y,z,out_of_domain\n";
        out.precision(17);
        std::size_t flagged = 0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            out << tr.points[i][0] << ',' << tr.points[i][1] << ',' << tr.points[i][2] << ',' << int(tr.out_of_domain[i])
                << '\n';
            flagged += tr.out_of_domain[i];
        }
        s["points"] = pts.size();
        s["flagged"] = flagged;
        t << "transported " << pts.size() << " points to " << a.out << '\n';
    }
    emit(as_json, s, t.str());
    return exit_ok;
}

int cmd_export(const std::string &svf, const std::string &mask_path, const std::string &prefix, bool as_json) {
    require_input(svf, "SVF");
    require_input(mask_path, "mask");
    if (prefix.empty()) throw UsageError("--out-prefix is required");
    require_output(prefix + ".triplets.txt");
    const SplineSVF field = read_svf(svf);
    if (!field.is_divergence_conforming()) throw UsageError("constraints exist only for divergence-conforming fields");
    const ConstraintSystem sys = assemble_constraints(field.grid(), read_mask(mask_path));
    std::ofstream trip(prefix + ".triplets.txt"), man(prefix + ".manifest.txt");
    write_triplets(sys, trip);
    write_index_manifest(sys, man);
    json s = {{"command", "export-constraints"},
              {"rows", sys.rows()},
              {"cols", sys.cols()},
              {"nonzeros", sys.matrix.nonZeros()},
              {"triplets", prefix + ".triplets.txt"},
              {"manifest", prefix + ".manifest.txt"}};
    std::ostringstream t;
    t << sys.rows() << " rows x " << sys.cols() << " columns, " << sys.matrix.nonZeros() << " nonzeros\nwrote " << prefix
      << ".triplets.txt and " << prefix << ".manifest.txt\n";
    emit(as_json, s, t.str());
    return exit_ok;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Incompressible diffeomorphic registration with divergence-conforming B-spline velocity fields"};
    app.require_subcommand(1);
    bool as_json = false;
    app.add_flag("--json", as_json, "Print a machine-readable summary on stdout");

    auto threads_opt = [](CLI::App *c, int &threads) {
        c->add_option("--threads", threads, "Worker threads (0: DIVREG_THREADS or all cores)")->check(CLI::NonNegativeNumber);
    };

    RegisterArgs ra;
    auto *reg = app.add_subcommand("register", "Register moving onto fixed");
    reg->add_option("fixed", ra.fixed, "Fixed image (.nii)")->required();
    reg->add_option("moving", ra.moving, "Moving image (.nii)")->required();
    reg->add_option("--mask", ra.mask, "Incompressible region (uint8 .nii)");
    reg->add_flag("--unconstrained", ra.unconstrained, "Divergence-conforming field without constraints");
    reg->add_flag("--classical", ra.classical, "Unconstrained classical cubic B-spline field");
    reg->add_option("--similarity", ra.similarity, "ssd, lncc or nmi")->capture_default_str();
    reg->add_option("--sim-weight", ra.sim_weight)->capture_default_str();
    reg->add_option("--bend-weight", ra.bend_weight)->capture_default_str();
    reg->add_option("--grid-spacing", ra.grid_spacing, "Finest knot spacing (mm)")->capture_default_str();
    reg->add_option("--levels", ra.levels, "Pyramid levels")->capture_default_str();
    reg->add_option("--steps", ra.steps, "Euler steps (power of two)")->capture_default_str();
    reg->add_option("--max-iter", ra.max_iter, "Iterations per level")->capture_default_str();
    reg->add_option("--grad-tol", ra.grad_tol)->capture_default_str();
    reg->add_option("--interp", ra.interp, "cubic or trilinear")->capture_default_str();
    reg->add_option("--gradient", ra.gradient, "exact or endpoint")->capture_default_str();
    reg->add_option("--lncc-sigma", ra.lncc_sigma, "LNCC window sigma (mm)")->capture_default_str();
    reg->add_option("--nmi-bins", ra.nmi_bins)->capture_default_str();
    reg->add_option("--parzen-order", ra.parzen, "1 or 3")->capture_default_str();
    reg->add_option("--out", ra.out, "Output SVF container")->required();
    reg->add_option("--report", ra.report, "JSON report (default: <out>.report.json)");
    threads_opt(reg, ra.threads);

    ExpArgs ea;
    auto *ex = app.add_subcommand("exp", "Exponentiate an SVF on a reference voxel grid");
    ex->add_option("svf", ea.svf)->required();
    ex->add_option("--reference", ea.reference, "Image providing the voxel grid")->required();
    ex->add_option("--steps", ea.steps)->capture_default_str();
    ex->add_option("--out", ea.out, "Displacement field (.nii, 3 components)");
    ex->add_option("--jacobian", ea.jacobian, "Jacobian determinant map (.nii)");
    ex->add_flag("--log-jacobian", ea.log_jacobian, "Write the natural log of the determinant instead");
    ex->add_option("--mask", ea.mask, "Restrict the determinant statistics to a mask");
    threads_opt(ex, ea.threads);

    std::string pj_svf, pj_mask, pj_out;
    auto *pj = app.add_subcommand("project", "Project an SVF onto divergence-free fields");
    pj->add_option("svf", pj_svf)->required();
    pj->add_option("--mask", pj_mask);
    pj->add_option("--out", pj_out)->required();

    std::string dc_svf, dc_mask;
    std::size_t dc_samples = 100000;
    std::uint64_t dc_seed = 0;
    auto *dc = app.add_subcommand("divcheck", "Sample |div v| over a mask and report the coefficient bound");
    dc->add_option("svf", dc_svf)->required();
    dc->add_option("--mask", dc_mask)->required();
    dc->add_option("--samples", dc_samples)->capture_default_str();
    dc->add_option("--seed", dc_seed)->capture_default_str();

    SynthArgs sa;
    auto *sy = app.add_subcommand("synth", "Generate a phantom pair, mask and ground-truth fields");
    sy->add_option("--spec", sa.kind, "sphere-shells, sinusoid-texture or checker-smooth")->capture_default_str();
    sy->add_option("--seed", sa.seed)->capture_default_str();
    sy->add_option("--size", sa.size)->capture_default_str();
    sy->add_option("--spacing", sa.spacing)->capture_default_str();
    sy->add_option("--smoothing", sa.smoothing, "Gaussian sigma (mm)")->capture_default_str();
    sy->add_option("--texture", sa.texture, "Added texture amplitude (fraction of range)")->capture_default_str();
    sy->add_flag("--second-modality", sa.second_modality, "Moving image uses the second intensity mapping");
    sy->add_option("--mask-fraction", sa.mask_fraction)->capture_default_str();
    sy->add_option("--amplitude", sa.amplitude, "Ground-truth coefficient std (mm); 0 for none")->capture_default_str();
    sy->add_option("--gt-grid-spacing", sa.gt_spacing)->capture_default_str();
    sy->add_option("--gt-kind", sa.gt_kind, "Field that warps the moving image: classical or conforming")->capture_default_str();
    sy->add_option("--steps", sa.steps)->capture_default_str();
    sy->add_option("--out-prefix", sa.prefix)->required();
    threads_opt(sy, sa.threads);

    WarpArgs wa;
    auto *wp = app.add_subcommand("warp", "Warp an image or transport points with exp(v)");
    wp->add_option("svf", wa.svf)->required();
    wp->add_option("--image", wa.image);
    wp->add_option("--points", wa.points, "CSV with x,y,z per line (mm)");
    wp->add_option("--out", wa.out)->required();
    wp->add_option("--interp", wa.interp)->capture_default_str();
    wp->add_flag("--inverse", wa.inverse, "Use exp(-v)");
    wp->add_option("--steps", wa.steps)->capture_default_str();
    threads_opt(wp, wa.threads);

    std::string xc_svf, xc_mask, xc_prefix;
    auto *xc = app.add_subcommand("export-constraints", "Write the sparse constraint system for a field's grid and a mask");
    xc->add_option("svf", xc_svf)->required();
    xc->add_option("--mask", xc_mask)->required();
    xc->add_option("--out-prefix", xc_prefix)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        app.exit(e);
        return exit_usage;
    }

    try {
        if (*reg) return cmd_register(ra, as_json);
        if (*ex) return cmd_exp(ea, as_json);
        if (*pj) return cmd_project(pj_svf, pj_mask, pj_out, as_json);
        if (*dc) return cmd_divcheck(dc_svf, dc_mask, dc_samples, dc_seed, as_json);
        if (*sy) return cmd_synth(sa, as_json);
        if (*wp) return cmd_warp(wa, as_json);
        if (*xc) return cmd_export(xc_svf, xc_mask, xc_prefix, as_json);
    } catch (const UsageError &e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return exit_usage;
    } catch (const ConfigError &e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return exit_usage;
    } catch (const ParseError &e) {
        std::cerr << "input error: " << e.what() << '\n';
        return exit_parse;
    } catch (const GeometryError &e) {
        std::cerr << "geometry error: " << e.what() << '\n';
        return exit_geometry;
    } catch (const SolverError &e) {
        std::cerr << "solver error: " << e.what() << '\n';
        return exit_solver;
    } catch (const Error &e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_other;
    } catch (const std::exception &e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return exit_internal;
    }
    return exit_internal;
}
