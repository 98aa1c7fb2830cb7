#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <string>

#include "json.hpp"
#include "seqread/chargemodel.hpp"
#include "seqread/error.hpp"

namespace seqread {

namespace {

constexpr const char* kFormat = "seqread-update-matrices";

std::string hex(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

double unhex(const nlohmann::json& j) {
    const std::string s = j.get<std::string>();
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') throw DataError("bad float in matrix cache: " + s);
    return v;
}

}  // namespace

void save_update_matrices(std::ostream& out, const UpdateMatrixSet& matrices) {
    const RateSet& r = matrices.rates();
    nlohmann::json j;
    j["format"] = kFormat;
    j["version"] = 1;
    j["rates"] = {{"gamma_plus", hex(r.gamma_plus)},
                  {"gamma_minus", hex(r.gamma_minus)},
                  {"big_gamma_plus", hex(r.big_gamma_plus)},
                  {"big_gamma_minus", hex(r.big_gamma_minus)},
                  {"dt", hex(r.dt)}};
    j["dn_max"] = matrices.dn_max();
    j["tail_mass"] = hex(matrices.tail_mass());
    nlohmann::json list = nlohmann::json::array();
    for (const Mat2& m : matrices.matrices()) list.push_back({hex(m.pp), hex(m.pm), hex(m.mp), hex(m.mm)});
    j["matrices"] = std::move(list);
    out << j.dump(1) << '\n';
}

UpdateMatrixSet load_update_matrices(std::istream& in) {
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("matrix cache is not valid JSON: ") + e.what());
    }
    try {
        if (j.at("format").get<std::string>() != kFormat) throw DataError("not a matrix cache file");
        if (j.at("version").get<int>() != 1) throw DataError("unsupported matrix cache version");
        const auto& jr = j.at("rates");
        RateSet r;
        r.gamma_plus = unhex(jr.at("gamma_plus"));
        r.gamma_minus = unhex(jr.at("gamma_minus"));
        r.big_gamma_plus = unhex(jr.at("big_gamma_plus"));
        r.big_gamma_minus = unhex(jr.at("big_gamma_minus"));
        r.dt = unhex(jr.at("dt"));
        r.validate();
        std::vector<Mat2> ms;
        for (const auto& e : j.at("matrices")) {
            if (e.size() != 4) throw DataError("matrix cache entry must have 4 elements");
            ms.push_back({unhex(e[0]), unhex(e[1]), unhex(e[2]), unhex(e[3])});
        }
        if (static_cast<int>(ms.size()) != j.at("dn_max").get<int>() + 1) throw DataError("dn_max does not match matrix count");
        return UpdateMatrixSet(r, std::move(ms), unhex(j.at("tail_mass")));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed matrix cache: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("malformed matrix cache: ") + e.what());
    }
}

}  // namespace seqread
