#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "divreg/constraint.hpp"
#include "divreg/error.hpp"
#include "divreg/flow.hpp"
#include "divreg/io.hpp"
#include "divreg/metrics.hpp"
#include "divreg/objective.hpp"
#include "divreg/phantom.hpp"
#include "divreg/solver.hpp"

namespace py = pybind11;
using namespace divreg;

namespace {

// Volumes cross the boundary as arrays indexed [i, j, k] (x first), i.e. Fortran order.
using VolumeIn = py::array_t<double, py::array::f_style | py::array::forcecast>;
using VectorIn = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::array_t<double> volume_out(const VoxelGeometry &g, std::span<const double> data) {
    py::array_t<double, py::array::f_style> out({g.dims[0], g.dims[1], g.dims[2]});
    std::copy(data.begin(), data.end(), out.mutable_data());
    return out;
}

py::array_t<bool> flags_out(const VoxelGeometry &g, const std::vector<std::uint8_t> &flags) {
    py::array_t<bool, py::array::f_style> out({g.dims[0], g.dims[1], g.dims[2]});
    std::transform(flags.begin(), flags.end(), out.mutable_data(), [](std::uint8_t f) { return f != 0; });
    return out;
}

py::array_t<double> vector_out(std::span<const double> v) {
    py::array_t<double> out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(v.size())});
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

std::span<const double> as_span(const VectorIn &a) {
    if (a.ndim() != 1) throw ShapeError("expected a one-dimensional array");
    return {a.data(), static_cast<std::size_t>(a.shape(0))};
}

Vec3 vec3(const std::array<double, 3> &a) { return {a[0], a[1], a[2]}; }
std::array<double, 3> arr3(const Vec3 &v) { return {v[0], v[1], v[2]}; }

std::vector<Vec3> points_in(const VectorIn &pts) {
    if (pts.ndim() != 2 || pts.shape(1) != 3) throw ShapeError("points must have shape (n, 3)");
    std::vector<Vec3> out(static_cast<std::size_t>(pts.shape(0)));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = Vec3(pts.at(i, 0), pts.at(i, 1), pts.at(i, 2));
    return out;
}

py::array_t<double> points_out(const std::vector<Vec3> &pts) {
    py::array_t<double> out({static_cast<py::ssize_t>(pts.size()), py::ssize_t{3}});
    auto w = out.mutable_unchecked<2>();
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (int d = 0; d < 3; ++d) w(static_cast<py::ssize_t>(i), d) = pts[i][d];
    return out;
}

Image3D image_from(const VoxelGeometry &g, const VolumeIn &a) {
    if (a.ndim() != 3 || a.shape(0) != g.dims[0] || a.shape(1) != g.dims[1] || a.shape(2) != g.dims[2])
        throw ShapeError("array shape does not match the geometry dims");
    return Image3D(g, std::vector<double>(a.data(), a.data() + a.size()));
}

Interpolation interp_from(const std::string &s) {
    if (s == "cubic") return Interpolation::cubic;
    if (s == "trilinear") return Interpolation::trilinear;
    throw ConfigError("interpolation must be 'cubic' or 'trilinear'");
}

EulerConfig euler(int steps, int threads) {
    EulerConfig e;
    e.steps = steps;
    e.threads = threads;
    e.validate();
    return e;
}

py::object json_loads(const std::string &s) { return py::module_::import("json").attr("loads")(s); }

} // namespace

PYBIND11_MODULE(_divreg, m) {
    m.doc() = "Incompressible registration with divergence-conforming B-spline velocity fields";

    auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<DomainError>(m, "DomainError", error);
    py::register_exception<IndexError>(m, "IndexError", error);
    py::register_exception<ShapeError>(m, "ShapeError", error);
    py::register_exception<GeometryError>(m, "GeometryError", error);
    py::register_exception<ConfigError>(m, "ConfigError", error);
    py::register_exception<ParseError>(m, "ParseError", error);
    py::register_exception<UnsupportedOperation>(m, "UnsupportedOperation", error);
    py::register_exception<SolverError>(m, "SolverError", error);

    py::class_<VoxelGeometry>(m, "VoxelGeometry")
        .def(py::init([](std::array<int, 3> dims, std::array<double, 3> spacing, std::array<double, 3> origin) {
                 VoxelGeometry g;
                 g.dims = {dims[0], dims[1], dims[2]};
                 g.spacing = vec3(spacing);
                 g.origin = vec3(origin);
                 g.validate();
                 return g;
             }),
             py::arg("dims"), py::arg("spacing") = std::array<double, 3>{1, 1, 1},
             py::arg("origin") = std::array<double, 3>{0, 0, 0})
        .def_property_readonly("dims", [](const VoxelGeometry &g) { return std::array<int, 3>{g.dims[0], g.dims[1], g.dims[2]}; })
        .def_property_readonly("spacing", [](const VoxelGeometry &g) { return arr3(g.spacing); })
        .def_property_readonly("origin", [](const VoxelGeometry &g) { return arr3(g.origin); })
        .def_property_readonly("voxel_count", &VoxelGeometry::voxel_count)
        .def("__eq__", [](const VoxelGeometry &a, const VoxelGeometry &b) { return a == b; })
        .def("__repr__", [](const VoxelGeometry &g) {
            return "VoxelGeometry(dims=(" + std::to_string(g.dims[0]) + ", " + std::to_string(g.dims[1]) + ", " +
                   std::to_string(g.dims[2]) + "))";
        });

    py::class_<Image3D>(m, "Image")
        .def(py::init(&image_from), py::arg("geometry"), py::arg("array"))
        .def_property_readonly("geometry", &Image3D::geometry)
        .def_property_readonly("array", [](const Image3D &img) { return volume_out(img.geometry(), img.data()); });

    py::class_<MaskRegion>(m, "Mask")
        .def(py::init([](const VoxelGeometry &g, const VolumeIn &a) { return MaskRegion::from_image(image_from(g, a), 0.5); }),
             py::arg("geometry"), py::arg("array"))
        .def_static("from_image", &MaskRegion::from_image, py::arg("image"), py::arg("threshold") = 0.5)
        .def_property_readonly("geometry", &MaskRegion::geometry)
        .def_property_readonly("count", &MaskRegion::count)
        .def_property_readonly("array", [](const MaskRegion &mk) {
            const std::vector<std::uint8_t> occ(mk.occupancy().begin(), mk.occupancy().end());
            return flags_out(mk.geometry(), occ);
        });

    py::class_<ControlGrid>(m, "ControlGrid")
        .def_static("covering", py::overload_cast<const VoxelGeometry &, double, int, int>(&ControlGrid::covering),
                    py::arg("geometry"), py::arg("spacing"), py::arg("divergence_order") = 2, py::arg("cell_multiple") = 1)
        .def_property_readonly("cells", [](const ControlGrid &g) { auto c = g.cells(); return std::array<int, 3>{c[0], c[1], c[2]}; })
        .def_property_readonly("spacing", [](const ControlGrid &g) { return arr3(g.spacing()); })
        .def_property_readonly("lower", [](const ControlGrid &g) { return arr3(g.lower()); })
        .def_property_readonly("upper", [](const ControlGrid &g) { return arr3(g.upper()); })
        .def("refined", &ControlGrid::refined)
        .def("coarsened", &ControlGrid::coarsened)
        .def("__eq__", [](const ControlGrid &a, const ControlGrid &b) { return a == b; });
    m.def("pyramid_grid", &pyramid_grid, py::arg("geometry"), py::arg("spacing"), py::arg("levels"));

    py::class_<SplineSVF>(m, "SplineSVF")
        .def_property_readonly("grid", &SplineSVF::grid)
        .def_property_readonly("is_divergence_conforming", &SplineSVF::is_divergence_conforming)
        .def_property_readonly("parameter_count", &SplineSVF::parameter_count)
        .def_property("parameters", [](const SplineSVF &f) { return vector_out(f.parameters()); },
                      [](SplineSVF &f, const VectorIn &a) { f.set_parameters(as_span(a)); })
        .def("velocity", [](const SplineSVF &f, const VectorIn &pts) {
            std::vector<Vec3> out;
            for (const Vec3 &p : points_in(pts)) out.push_back(eval_velocity(f, p));
            return points_out(out);
        }, py::arg("points"))
        .def("divergence", [](const SplineSVF &f, const VectorIn &pts) {
            std::vector<double> out;
            for (const Vec3 &p : points_in(pts))
                out.push_back(f.is_divergence_conforming() ? eval_divergence(f, p) : eval_jacobian(f, p).trace());
            return vector_out(out);
        }, py::arg("points"))
        .def("divergence_coefficients", [](const SplineSVF &f) { return vector_out(divergence_coefficients(f)); })
        .def("refine", [](const SplineSVF &f) { return refine(f); })
        .def("scaled", [](const SplineSVF &f, double s) { return scaled(f, s); });
    py::class_<DivConformingSVF, SplineSVF>(m, "DivConformingSVF").def(py::init<ControlGrid>(), py::arg("grid"));
    py::class_<ClassicalSVF, SplineSVF>(m, "ClassicalSVF").def(py::init<ControlGrid, int>(), py::arg("grid"), py::arg("order") = 3);

    py::class_<ConstraintSystem>(m, "ConstraintSystem")
        .def_property_readonly("rows", &ConstraintSystem::rows)
        .def_property_readonly("cols", &ConstraintSystem::cols)
        .def_property_readonly("active_indices", [](const ConstraintSystem &s) {
            py::array_t<int> out({static_cast<py::ssize_t>(s.active_indices.size()), py::ssize_t{3}});
            auto w = out.mutable_unchecked<2>();
            for (std::size_t r = 0; r < s.active_indices.size(); ++r)
                for (int d = 0; d < 3; ++d) w(static_cast<py::ssize_t>(r), d) = s.active_indices[r][d];
            return out;
        })
        .def("csr", [](const ConstraintSystem &s) {
            SparseRowMatrix a = s.matrix;
            a.makeCompressed();
            const auto nnz = static_cast<std::size_t>(a.nonZeros());
            py::array_t<double> data(std::vector<py::ssize_t>{static_cast<py::ssize_t>(nnz)});
            py::array_t<long long> indices(std::vector<py::ssize_t>{static_cast<py::ssize_t>(nnz)});
            py::array_t<long long> indptr(std::vector<py::ssize_t>{static_cast<py::ssize_t>(a.rows() + 1)});
            std::copy(a.valuePtr(), a.valuePtr() + nnz, data.mutable_data());
            std::copy(a.innerIndexPtr(), a.innerIndexPtr() + nnz, indices.mutable_data());
            std::copy(a.outerIndexPtr(), a.outerIndexPtr() + a.rows() + 1, indptr.mutable_data());
            return py::make_tuple(data, indices, indptr, py::make_tuple(a.rows(), a.cols()));
        }, "(data, indices, indptr, shape) of the constraint matrix")
        .def("residual", [](const ConstraintSystem &s, const VectorIn &t) { return vector_out(s.residual(as_span(t))); })
        .def("max_residual", [](const ConstraintSystem &s, const VectorIn &t) { return s.max_residual(as_span(t)); });
    m.def("assemble_constraints", py::overload_cast<const ControlGrid &, const MaskRegion &>(&assemble_constraints),
          py::arg("grid"), py::arg("mask"));
    m.def("project_divergence_free", [](const SplineSVF &f, const ConstraintSystem &s) {
        return project_divergence_free(DivConformingSVF(f), s);
    }, py::arg("field"), py::arg("system"));
    m.def("project_classical_at_knots", [](const SplineSVF &f) { return project_classical_at_knots(ClassicalSVF(f)); },
          py::arg("field"));

    py::class_<DivergenceReport>(m, "DivergenceReport")
        .def_readonly("max_abs_psi", &DivergenceReport::max_abs_psi)
        .def_readonly("max_abs_divergence", &DivergenceReport::max_abs_divergence)
        .def_readonly("samples", &DivergenceReport::samples)
        .def_readonly("active_indices", &DivergenceReport::active_indices)
        .def_property_readonly("bound_holds", &DivergenceReport::bound_holds);
    m.def("divergence_check", &divergence_check, py::arg("field"), py::arg("mask"), py::arg("samples") = 100000,
          py::arg("seed") = 0);

    m.def("exponential", [](const SplineSVF &f, const VoxelGeometry &g, int steps, int threads) {
        const DeformationField def = exponential_euler(f, euler(steps, threads), g);
        py::array_t<double, py::array::f_style> disp({g.dims[0], g.dims[1], g.dims[2], 3});
        double *w = disp.mutable_data();
        const std::size_t n = g.voxel_count();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t d = 0; d < 3; ++d) w[i + d * n] = def.displacement[i][static_cast<int>(d)];
        return py::make_tuple(disp, flags_out(g, def.out_of_domain));
    }, py::arg("field"), py::arg("geometry"), py::arg("steps") = 64, py::arg("threads") = 0,
       "(displacement[i, j, k, c] in mm, out_of_domain[i, j, k])");
    m.def("jacobian_determinant", [](const SplineSVF &f, const VoxelGeometry &g, int steps, int threads) {
        const DeterminantMap det = jacobian_determinant_map(f, euler(steps, threads), g);
        return py::make_tuple(volume_out(g, det.determinant.data()), flags_out(g, det.out_of_domain),
                              det.min_step_determinant);
    }, py::arg("field"), py::arg("geometry"), py::arg("steps") = 64, py::arg("threads") = 0,
       "(determinant, out_of_domain, min_step_determinant); NaN where trajectories left the grid box");
    m.def("warp_image", [](const Image3D &img, const SplineSVF &f, int steps, const std::string &interp, int threads) {
        return warp_image(img, exponential_euler(f, euler(steps, threads), img.geometry()), interp_from(interp));
    }, py::arg("image"), py::arg("field"), py::arg("steps") = 64, py::arg("interpolation") = "cubic", py::arg("threads") = 0);
    m.def("warp_points", [](const VectorIn &pts, const SplineSVF &f, int steps) {
        const PointTransport t = warp_points(points_in(pts), f, euler(steps, 1));
        py::array_t<bool> flags(std::vector<py::ssize_t>{static_cast<py::ssize_t>(t.out_of_domain.size())});
        std::transform(t.out_of_domain.begin(), t.out_of_domain.end(), flags.mutable_data(), [](auto x) { return x != 0; });
        return py::make_tuple(points_out(t.points), flags);
    }, py::arg("points"), py::arg("field"), py::arg("steps") = 64);

    m.def("similarity", [](const std::string &kind, const Image3D &ref, const Image3D &warped, double sigma, int bins,
                           int parzen) {
        MetricResult r;
        switch (parse_similarity(kind)) {
        case Similarity::ssd: r = ssd_value_grad(ref, warped); break;
        case Similarity::lncc: r = lncc_value_grad(ref, warped, sigma); break;
        case Similarity::nmi: r = nmi_value_grad(ref, warped, bins, parzen); break;
        }
        return py::make_tuple(r.value, volume_out(ref.geometry(), r.gradient), r.degenerate);
    }, py::arg("kind"), py::arg("reference"), py::arg("warped"), py::arg("lncc_sigma_mm") = 5.0, py::arg("nmi_bins") = 64,
       py::arg("parzen_order") = 3, "(value, d value / d warped, degenerate)");
    m.def("bending_energy", [](const SplineSVF &f, const VoxelGeometry &g) {
        const BendingResult r = bending_energy_value_grad(f, g);
        return py::make_tuple(r.value, vector_out(r.gradient));
    }, py::arg("field"), py::arg("samples"));

    py::class_<ObjectiveConfig>(m, "ObjectiveConfig")
        .def(py::init<>())
        .def_property("similarity", [](const ObjectiveConfig &c) { return to_string(c.similarity); },
                      [](ObjectiveConfig &c, const std::string &s) { c.similarity = parse_similarity(s); })
        .def_readwrite("similarity_weight", &ObjectiveConfig::similarity_weight)
        .def_readwrite("bending_weight", &ObjectiveConfig::bending_weight)
        .def_readwrite("lncc_sigma_mm", &ObjectiveConfig::lncc_sigma_mm)
        .def_readwrite("nmi_bins", &ObjectiveConfig::nmi_bins)
        .def_readwrite("parzen_order", &ObjectiveConfig::parzen_order)
        .def_property("interpolation",
                      [](const ObjectiveConfig &c) { return c.interpolation == Interpolation::cubic ? "cubic" : "trilinear"; },
                      [](ObjectiveConfig &c, const std::string &s) { c.interpolation = interp_from(s); })
        .def_property("gradient",
                      [](const ObjectiveConfig &c) { return c.gradient == GradientMode::exact_adjoint ? "exact" : "endpoint"; },
                      [](ObjectiveConfig &c, const std::string &s) {
                          if (s == "exact") c.gradient = GradientMode::exact_adjoint;
                          else if (s == "endpoint") c.gradient = GradientMode::endpoint;
                          else throw ConfigError("gradient must be 'exact' or 'endpoint'");
                      })
        .def_readwrite("threads", &ObjectiveConfig::threads);

    py::class_<SolverConfig>(m, "SolverConfig")
        .def(py::init<>())
        .def_readwrite("max_iterations", &SolverConfig::max_iterations)
        .def_readwrite("gradient_tolerance", &SolverConfig::gradient_tolerance)
        .def_readwrite("function_tolerance", &SolverConfig::function_tolerance)
        .def_readwrite("history", &SolverConfig::history)
        .def_readwrite("initial_step", &SolverConfig::initial_step)
        .def_readwrite("feasibility", &SolverConfig::feasibility)
        .def_readwrite("pyramid_levels", &SolverConfig::pyramid_levels);

    py::class_<RegistrationObjective>(m, "RegistrationObjective")
        .def(py::init([](const Image3D &moving, const Image3D &fixed, const SplineSVF &layout, ObjectiveConfig cfg,
                         int steps) { return new RegistrationObjective(moving, fixed, layout, cfg, euler(steps, cfg.threads)); }),
             py::arg("moving"), py::arg("fixed"), py::arg("layout"), py::arg("config") = ObjectiveConfig{},
             py::arg("steps") = 64)
        .def("value", [](RegistrationObjective &o, const VectorIn &t) { return o.evaluate(as_span(t), {}); })
        .def("value_and_gradient", [](RegistrationObjective &o, const VectorIn &t) {
            std::vector<double> g(o.parameter_count());
            const double v = o.evaluate(as_span(t), g);
            return py::make_tuple(v, vector_out(g));
        });

    m.def("solve_constrained", [](const py::function &f, const ConstraintSystem &system, const VectorIn &theta0,
                                  SolverConfig cfg) {
        ObjectiveFunction fn = [&f](std::span<const double> x, std::span<double> grad) {
            py::gil_scoped_acquire gil;
            py::tuple r = f(vector_out(x));
            const auto g = py::cast<VectorIn>(r[1]);
            const auto gs = as_span(g);
            if (gs.size() != grad.size()) throw ShapeError("gradient length differs from the parameter count");
            std::copy(gs.begin(), gs.end(), grad.begin());
            return py::cast<double>(r[0]);
        };
        const auto t0 = as_span(theta0);
        const SolveResult r = solve_constrained(fn, system, std::vector<double>(t0.begin(), t0.end()), cfg);
        return py::make_tuple(vector_out(r.theta), json_loads(solver_report_json(r.report)));
    }, py::arg("fun"), py::arg("system"), py::arg("theta0"), py::arg("config") = SolverConfig{},
       "Minimise fun(theta) -> (value, gradient) subject to the system; returns (theta, report dict)");

    m.def("register", [](const Image3D &moving, const Image3D &fixed, const MaskRegion *mask, ObjectiveConfig objective,
                         SolverConfig solver, double grid_spacing, bool constrained, bool classical, int steps) {
        PyramidSetup setup;
        setup.grid_spacing = grid_spacing;
        setup.constrained = constrained && !classical;
        setup.classical = classical;
        setup.euler = euler(steps, objective.threads);
        RegistrationResult r = [&] {
            py::gil_scoped_release release;
            return register_pyramid(moving, fixed, mask, objective, solver, setup);
        }();
        return py::make_tuple(std::move(r.field), json_loads(registration_report_json(r.report)));
    }, py::arg("moving"), py::arg("fixed"), py::arg("mask") = nullptr, py::arg("objective") = ObjectiveConfig{},
       py::arg("solver") = SolverConfig{}, py::arg("grid_spacing") = 5.0, py::arg("constrained") = true,
       py::arg("classical") = false, py::arg("steps") = 64, "Multi-resolution registration; returns (field, report dict)");

    m.def("read_nifti", [](const std::string &p) { return read_nifti(p); }, py::arg("path"));
    m.def("write_nifti", [](const Image3D &img, const std::string &p, const std::string &dtype) {
        NiftiDatatype t = NiftiDatatype::float64;
        if (dtype == "float32") t = NiftiDatatype::float32;
        else if (dtype == "uint8") t = NiftiDatatype::uint8;
        else if (dtype != "float64") throw ConfigError("dtype must be float64, float32 or uint8");
        write_nifti(img, p, t);
    }, py::arg("image"), py::arg("path"), py::arg("dtype") = "float64");
    m.def("read_mask", [](const std::string &p) { return read_mask(p); }, py::arg("path"));
    m.def("write_mask", [](const MaskRegion &mk, const std::string &p) { write_mask(mk, p); }, py::arg("mask"), py::arg("path"));
    m.def("read_svf", [](const std::string &p) { return read_svf(p); }, py::arg("path"));
    m.def("write_svf", [](const SplineSVF &f, const std::string &p) { write_svf_with_sidecar(f, p); }, py::arg("field"),
          py::arg("path"));

    m.def("make_phantom", [](const std::string &kind, int size, double spacing, std::uint64_t seed, double smoothing_mm,
                             double texture, bool second_modality) {
        PhantomSpec s;
        s.kind = parse_phantom_kind(kind);
        s.size = size;
        s.spacing = spacing;
        s.seed = seed;
        s.smoothing_mm = smoothing_mm;
        s.texture = texture;
        s.second_modality = second_modality;
        Phantom p = make_phantom(s);
        return py::make_tuple(std::move(p.primary), p.secondary ? py::cast(std::move(*p.secondary)) : py::none());
    }, py::arg("kind") = "sphere-shells", py::arg("size") = 64, py::arg("spacing") = 1.0, py::arg("seed") = 0,
       py::arg("smoothing_mm") = 1.0, py::arg("texture") = 0.0, py::arg("second_modality") = false,
       "(primary, secondary or None)");
    m.def("central_mask", &central_mask, py::arg("geometry"), py::arg("fraction"));
}
