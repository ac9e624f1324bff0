#pragma once
#include <string>

#include "macp/io.hpp"

namespace testutil {

inline macp::ModelSpec fixture(const std::string& name) {
    return macp::load_model(std::string(MACP_FIXTURES) + "/" + name + ".json");
}

inline nlohmann::json fixture_json(const std::string& name) {
    return macp::read_json_file(std::string(MACP_FIXTURES) + "/" + name + ".json");
}

}  // namespace testutil
