#include "dlnlab/serialize.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace dln {

std::string format_g17(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

Json matrix_to_json(const Matrix& m) {
    Json rows = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        Json row = Json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const Json& j) {
    if (!j.is_array() || j.empty() || !j[0].is_array())
        throw std::invalid_argument("matrix: expected a non-empty 2D array");
    const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
    const Eigen::Index cols = static_cast<Eigen::Index>(j[0].size());
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        if (static_cast<Eigen::Index>(j[i].size()) != cols)
            throw std::invalid_argument("matrix: ragged rows");
        for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
    }
    return m;
}

Json params_to_json(const Params& theta) {
    Json j;
    j["widths"] = theta.shape().widths;
    Json layers = Json::array();
    for (const Matrix& W : theta.layers()) layers.push_back(matrix_to_json(W));
    j["layers"] = std::move(layers);
    return j;
}

Params params_from_json(const Json& j) {
    NetShape shape{j.at("widths").get<std::vector<int>>()};
    std::vector<Matrix> layers;
    for (const Json& l : j.at("layers")) layers.push_back(matrix_from_json(l));
    return Params(shape, std::move(layers));
}

Json cost_to_json(const CostSpec& cost) {
    Json j;
    if (cost.is_mse()) {
        j["type"] = "mse";
        j["x"] = matrix_to_json(cost.mse().X);
        j["y"] = matrix_to_json(cost.mse().Y);
    } else if (cost.is_mc()) {
        j["type"] = "mc";
        j["a_star"] = matrix_to_json(cost.mc().A_star);
        Json obs = Json::array();
        for (auto [i, k] : cost.mc().observed) obs.push_back(Json::array({i, k}));
        j["observed"] = std::move(obs);
    } else if (cost.is_trace()) {
        j["type"] = "trace";
        j["g"] = matrix_to_json(cost.trace().G);
    } else {
        j["type"] = "localized";
        j["base"] = cost_to_json(*cost.localized().base);
        j["g"] = matrix_to_json(cost.localized().G);
        j["r"] = cost.localized().r;
    }
    return j;
}

CostSpec cost_from_json(const Json& j) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "mse") return MseCost{matrix_from_json(j.at("x")), matrix_from_json(j.at("y"))};
    if (type == "mc") {
        McCost c;
        c.A_star = matrix_from_json(j.at("a_star"));
        for (const Json& o : j.at("observed"))
            c.observed.emplace_back(o.at(0).get<int>(), o.at(1).get<int>());
        return c;
    }
    if (type == "trace") return TraceCost{matrix_from_json(j.at("g"))};
    if (type == "localized") {
        LocalizedCost c;
        c.base = std::make_shared<CostSpec>(cost_from_json(j.at("base")));
        c.G = matrix_from_json(j.at("g"));
        c.r = j.at("r").get<double>();
        return c;
    }
    throw std::invalid_argument("cost: unknown type '" + type + "'");
}

std::string trajectory_csv(const Trajectory& traj) {
    std::ostringstream out;
    out << "step,time,loss_train,loss_test,grad_norm,param_norm,rank,nuclear_norm,balance_defect\n";
    for (const SnapshotRecord& s : traj.snapshots) {
        out << s.step << ',' << format_g17(s.time) << ',' << format_g17(s.loss_train) << ','
            << format_g17(s.loss_test ? *s.loss_test : std::nan("")) << ',' << format_g17(s.grad_norm)
            << ',' << format_g17(s.param_norm) << ',' << s.rank << ',' << format_g17(s.nuclear_norm)
            << ',' << format_g17(s.balance_defect) << '\n';
    }
    return out.str();
}

std::string path_grid_csv(const PathGrid& grid) {
    std::ostringstream out;
    out << "t";
    if (!grid.values.empty()) {
        const Params& first = grid.values.front();
        for (int l = 0; l < first.depth(); ++l) {
            const Matrix& W = first.layer(l);
            for (Eigen::Index i = 0; i < W.rows(); ++i)
                for (Eigen::Index j = 0; j < W.cols(); ++j)
                    out << ",w" << (l + 1) << '_' << i << '_' << j;
        }
    }
    out << '\n';
    for (size_t k = 0; k < grid.times.size(); ++k) {
        out << format_g17(grid.times[k]);
        const Params& theta = grid.values[k];
        for (int l = 0; l < theta.depth(); ++l) {
            const Matrix& W = theta.layer(l);
            for (Eigen::Index i = 0; i < W.rows(); ++i)
                for (Eigen::Index j = 0; j < W.cols(); ++j) out << ',' << format_g17(W(i, j));
        }
        out << '\n';
    }
    return out.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
    f << content;
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for reading: " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::string sha256_hex(const std::string& data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1)
        throw std::runtime_error("sha256 failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

} // namespace dln
