#include "sgpo/external_improver.hpp"

#include <httplib.h>
#include <json.hpp>

#include "sgpo/errors.hpp"
#include "sgpo/textenc.hpp"

namespace sgpo {

using nlohmann::json;

std::string ExternalImproverClient::request(const std::string& mode, const std::string& instruction,
                                            const std::string& response_a,
                                            const std::string& response_b) const {
  httplib::Client client(cfg_.host, cfg_.port);
  client.set_read_timeout(30, 0);
  json body{{"instruction", bytes_to_text(instruction)},
            {"response_a", bytes_to_text(response_a)},
            {"response_b", bytes_to_text(response_b)},
            {"mode", mode}};
  auto res = client.Post(cfg_.path, body.dump(), "application/json");
  if (!res)
    throw StageError("external improver unreachable at " + cfg_.host + ":" +
                     std::to_string(cfg_.port));
  if (res->status != 200)
    throw StageError("external improver returned status " + std::to_string(res->status));
  json parsed = json::parse(res->body, nullptr, false);
  if (parsed.is_discarded() || !parsed.contains("text"))
    throw StageError("external improver returned a malformed body");
  return text_to_bytes(parsed["text"].get<std::string>());
}

std::string ExternalImproverClient::improve(const std::string& instruction,
                                            const std::string& response_a,
                                            const std::string& response_b) const {
  return request("improve", instruction, response_a, response_b);
}

std::string ExternalImproverClient::direct(const std::string& instruction) const {
  return request("direct", instruction, "", "");
}

}  // namespace sgpo
