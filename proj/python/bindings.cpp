#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cdgs/gradients.hpp"
#include "cdgs/io.hpp"
#include "cdgs/losses.hpp"
#include "cdgs/motion.hpp"
#include "cdgs/projection.hpp"
#include "cdgs/rasterizer.hpp"
#include "cdgs/scene.hpp"
#include "cdgs/threading.hpp"
#include "cdgs/trainer.hpp"

namespace py = pybind11;
using namespace cdgs;

namespace {

Mat4 mat4_from_numpy(const py::array_t<double>& a) {
    auto r = a.unchecked<2>();
    if (r.shape(0) != 4 || r.shape(1) != 4)
        throw std::invalid_argument("expected a 4x4 matrix");
    Mat4 m;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            m(i, j) = r(i, j);
    return m;
}

py::array_t<double> image_to_numpy(const Image& img) {
    py::array_t<double> out({img.height, img.width, img.channels});
    std::memcpy(out.mutable_data(), img.data.data(), img.data.size() * sizeof(double));
    return out;
}

Image image_from_numpy(const py::array_t<double>& a) {
    auto r = a.unchecked<3>();
    Image img(static_cast<int>(r.shape(0)), static_cast<int>(r.shape(1)),
              static_cast<int>(r.shape(2)));
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c)
                img.at(y, x, c) = r(y, x, c);
    return img;
}

py::array_t<double> flow_to_numpy(const FlowField& f) {
    py::array_t<double> out({f.height, f.width, 2});
    std::memcpy(out.mutable_data(), f.uv.data(), f.uv.size() * sizeof(double));
    return out;
}

Scene scene_from_arrays(const MotionModel& model, int sh_degree,
                        const py::array_t<double>& centers, const py::array_t<double>& rots,
                        const py::array_t<double>& log_scales, const py::array_t<double>& shs,
                        const py::array_t<double>& opacity_logits, double extent) {
    auto c = centers.unchecked<3>();      // N x 3 x C
    auto r = rots.unchecked<3>();         // N x 4 x 2
    auto s = log_scales.unchecked<2>();   // N x 3
    auto h = shs.unchecked<3>();          // N x 3 x (k+1)^2
    auto o = opacity_logits.unchecked<1>(); // N

    const auto n = c.shape(0);
    const int nc = model.coeffs_per_axis();
    const int n_sh = (sh_degree + 1) * (sh_degree + 1);
    if (c.shape(1) != 3 || c.shape(2) != nc)
        throw std::invalid_argument("centers must be N x 3 x coeffs_per_axis");
    if (h.shape(1) != 3 || h.shape(2) != n_sh)
        throw std::invalid_argument("shs must be N x 3 x (sh_degree+1)^2");

    Scene scene;
    scene.model = model;
    scene.sh_degree = sh_degree;
    scene.extent = extent;
    for (py::ssize_t i = 0; i < n; ++i) {
        DynamicGaussian g = DynamicGaussian::zeros(model, sh_degree);
        for (int axis = 0; axis < 3; ++axis)
            for (int k = 0; k < nc; ++k)
                g.center_coeff(axis, k) = c(i, axis, k);
        for (int q = 0; q < 4; ++q) {
            g.rot_coeffs[2 * q] = r(i, q, 0);
            g.rot_coeffs[2 * q + 1] = r(i, q, 1);
        }
        for (int k = 0; k < 3; ++k)
            g.log_scale[k] = s(i, k);
        for (int ch = 0; ch < 3; ++ch)
            for (int k = 0; k < n_sh; ++k)
                g.sh_coeffs[static_cast<std::size_t>(ch) * n_sh + k] = h(i, ch, k);
        g.opacity_logit = o(i);
        scene.gaussians.push_back(std::move(g));
    }
    return scene;
}

} // namespace

PYBIND11_MODULE(_cdgs, m) {
    m.doc() = "Compact dynamic 3D Gaussian scenes: CPU renderer and utilities";

    py::enum_<MotionKind>(m, "MotionKind")
        .value("Fourier", MotionKind::Fourier)
        .value("Polynomial", MotionKind::Polynomial)
        .value("Spline", MotionKind::Spline);

    py::class_<MotionModel>(m, "MotionModel")
        .def(py::init([](MotionKind kind, int order, bool time_varying_scale) {
                 return MotionModel{kind, order, time_varying_scale};
             }),
             py::arg("kind"), py::arg("order"), py::arg("time_varying_scale") = false)
        .def_readwrite("kind", &MotionModel::kind)
        .def_readwrite("order", &MotionModel::order)
        .def_readwrite("time_varying_scale", &MotionModel::time_varying_scale)
        .def_property_readonly("coeffs_per_axis", &MotionModel::coeffs_per_axis)
        .def("__eq__", [](const MotionModel& a, const MotionModel& b) { return a == b; });

    py::class_<Scene>(m, "Scene")
        .def_readonly("model", &Scene::model)
        .def_readonly("sh_degree", &Scene::sh_degree)
        .def_readwrite("extent", &Scene::extent)
        .def_property_readonly("size", &Scene::size)
        .def_property_readonly("time_range",
                               [](const Scene& s) { return py::make_tuple(s.time_range[0], s.time_range[1]); });

    py::class_<Camera>(m, "Camera")
        .def(py::init([](int w, int h, double fx, double fy, double cx, double cy,
                         const py::array_t<double>& w2c) {
                 return Camera(w, h, fx, fy, cx, cy, mat4_from_numpy(w2c));
             }),
             py::arg("width"), py::arg("height"), py::arg("fx"), py::arg("fy"), py::arg("cx"),
             py::arg("cy"), py::arg("world_to_camera"))
        .def_readonly("width", &Camera::width)
        .def_readonly("height", &Camera::height);

    m.def("param_count", &param_count_per_gaussian, py::arg("model"), py::arg("sh_degree"));

    m.def("validate", [](const Scene& s) {
        py::list out;
        for (const auto& v : validate_scene(s))
            out.append(py::make_tuple(v.gaussian_index, v.message));
        return out;
    });

    m.def("make_scene", &scene_from_arrays, py::arg("model"), py::arg("sh_degree"),
          py::arg("center_coeffs"), py::arg("rot_coeffs"), py::arg("log_scale"),
          py::arg("sh_coeffs"), py::arg("opacity_logit"), py::arg("extent") = 1.0);

    m.def(
        "compose",
        [](const Scene& a, const Scene& b, const py::array_t<double>& transform, double tshift) {
            return compose(a, b, mat4_from_numpy(transform), TimeMap{1.0, tshift});
        },
        py::arg("a"), py::arg("b"), py::arg("transform"), py::arg("tshift") = 0.0);

    m.def(
        "render_color",
        [](const Scene& s, const Camera& cam, double t) {
            const RenderOutput out = render_color(s, cam, t);
            return py::make_tuple(image_to_numpy(out.color), image_to_numpy(out.alpha));
        },
        py::arg("scene"), py::arg("camera"), py::arg("t"));

    m.def(
        "render_flow",
        [](const Scene& s, const Camera& cam, double t, double dt) {
            const FlowOutput out = render_flow(s, cam, t, dt);
            return py::make_tuple(flow_to_numpy(out.fwd), flow_to_numpy(out.bwd));
        },
        py::arg("scene"), py::arg("camera"), py::arg("t"), py::arg("dt"));

    m.def("save_scene", &save_scene, py::arg("path"), py::arg("scene"));
    m.def("load_scene", &load_scene, py::arg("path"));
    m.def("scene_file_bytes", &scene_file_bytes, py::arg("scene"));

    m.def(
        "basis",
        [](const MotionModel& model, double t) { return basis(model, t).values; },
        py::arg("model"), py::arg("t"));

    m.def(
        "psnr", [](const py::array_t<double>& a, const py::array_t<double>& b) {
            return psnr(image_from_numpy(a), image_from_numpy(b));
        },
        py::arg("a"), py::arg("b"));

    m.def(
        "ssim", [](const py::array_t<double>& a, const py::array_t<double>& b) {
            return ssim(image_from_numpy(a), image_from_numpy(b));
        },
        py::arg("a"), py::arg("b"));

    m.def(
        "grad_check",
        [](const Scene& s, const Camera& cam, double t, double h) {
            const auto rep = grad_check(s, cam, t, NamedLoss::Recon, h);
            py::dict d;
            d["max_rel_err"] = rep.max_rel_err;
            d["max_abs_err"] = rep.max_abs_err;
            d["worst_param"] = rep.worst_param;
            d["step"] = rep.step;
            d["params_checked"] = rep.params_checked;
            return d;
        },
        py::arg("scene"), py::arg("camera"), py::arg("t"), py::arg("h") = 1e-5);

    m.def("set_threads", [](unsigned n) { ThreadPool::instance().set_threads(n); });
}
