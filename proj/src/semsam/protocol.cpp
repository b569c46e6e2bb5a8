#include "semsam/protocol.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <bit>
#include <cerrno>
#include <cstring>
#include <istream>
#include <ostream>
#include <thread>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "semsam/base64.hpp"
#include "semsam/error.hpp"

namespace semsam {

namespace {

using nlohmann::json;

const json& require(const json& doc, const char* key) {
  auto it = doc.find(key);
  if (it == doc.end()) throw DecodeError("missing_field", fmt::format("missing field '{}'", key));
  return *it;
}

FilterSpec parse_filter(const json& f) {
  if (!f.is_object() || !f.contains("type") || !f["type"].is_string())
    throw DecodeError("bad_filter", "filter must be an object with a type");
  const auto type = f["type"].get<std::string>();
  if (type == "top_m") {
    if (!f.contains("m") || !f["m"].is_number_unsigned() || f["m"].get<std::uint64_t>() < 1 ||
        f["m"].get<std::uint64_t>() > 0xFFFFFFFFull)
      throw DecodeError("bad_filter", "top_m requires integer m >= 1");
    return FilterSpec::top_m(f["m"].get<std::uint32_t>());
  }
  if (type == "top_p") {
    if (!f.contains("p") || !f["p"].is_number()) throw DecodeError("bad_filter", "top_p requires number p");
    const double p = f["p"].get<double>();
    if (!(p > 0.0 && p <= 1.0)) throw DecodeError("bad_filter", "top_p requires 0 < p <= 1");
    return FilterSpec::top_p(p);
  }
  throw DecodeError("bad_filter", "unknown filter type " + type);
}

KeepSpec parse_keep(const json& k) {
  if (!k.is_object() || !k.contains("type") || !k["type"].is_string())
    throw DecodeError("bad_keep", "keep must be an object with a type");
  const auto type = k["type"].get<std::string>();
  if (type == "k_prime") {
    if (!k.contains("k_prime") || !k["k_prime"].is_number_unsigned() || k["k_prime"].get<std::uint64_t>() < 1 ||
        k["k_prime"].get<std::uint64_t>() > 0xFFFFFFFFull)
      throw DecodeError("bad_keep", "k_prime requires integer k_prime >= 1");
    return KeepSpec::top_k_prime(k["k_prime"].get<std::uint32_t>());
  }
  if (type == "threshold") {
    if (!k.contains("t") || !k["t"].is_number()) throw DecodeError("bad_keep", "threshold requires number t");
    return KeepSpec::threshold(k["t"].get<float>());
  }
  throw DecodeError("bad_keep", "unknown keep type " + type);
}

}  // namespace

std::string encode_logits(std::span<const float> logits) {
  std::vector<std::uint8_t> raw(logits.size() * 4);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(logits[i]);
    for (int b = 0; b < 4; ++b) raw[i * 4 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  return base64_encode(raw);
}

DecodeRequest parse_request(const json& doc) {
  if (!doc.is_object()) throw DecodeError("bad_request", "request must be a JSON object");
  DecodeRequest req;

  const auto& b64 = require(doc, "logits_b64");
  if (!b64.is_string()) throw DecodeError("bad_base64", "logits_b64 must be a string");
  auto raw = base64_decode(b64.get_ref<const std::string&>());
  if (!raw) throw DecodeError("bad_base64", "logits_b64 is not valid base64");
  if (raw->size() % 4 != 0) throw DecodeError("bad_logits_len", "logits payload is not a whole number of f32");
  req.logits.resize(raw->size() / 4);
  for (std::size_t i = 0; i < req.logits.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>((*raw)[i * 4 + b]) << (8 * b);
    req.logits[i] = std::bit_cast<float>(bits);
  }

  const auto& temp = require(doc, "temperature");
  if (!temp.is_number()) throw DecodeError("bad_temperature", "temperature must be a number");
  req.temperature = temp.get<double>();
  req.filter = parse_filter(require(doc, "filter"));
  req.keep = parse_keep(require(doc, "keep"));

  const auto& select = require(doc, "select");
  if (select == "argmax") {
    req.select = SelectMode::argmax;
  } else if (select == "sample") {
    req.select = SelectMode::sample;
  } else {
    throw DecodeError("bad_select", "select must be \"argmax\" or \"sample\"");
  }

  if (auto it = doc.find("seed"); it != doc.end() && !it->is_null()) {
    if (!it->is_number_unsigned()) throw DecodeError("bad_seed", "seed must be a non-negative integer");
    req.seed = it->get<std::uint64_t>();
  }
  if (auto it = doc.find("score_temperature"); it != doc.end()) {
    if (!it->is_number()) throw DecodeError("bad_score_temperature", "score_temperature must be a number");
    req.score_temperature = it->get<double>();
  }
  return req;
}

json outcome_to_json(const std::string& id, const StepOutcome& outcome) {
  json candidates = json::array();
  for (const auto& c : outcome.candidates)
    candidates.push_back({{"token", c.token}, {"p", c.p}, {"score", c.score}});
  return {{"id", id}, {"token", outcome.token}, {"deferred", outcome.deferred}, {"candidates", candidates}};
}

std::string handle_request_line(std::string_view line, const Decoder& decoder) {
  std::string id;
  try {
    json doc;
    try {
      doc = json::parse(line);
    } catch (const json::parse_error&) {
      throw DecodeError("bad_json", "request is not valid JSON");
    }
    if (doc.is_object()) {
      if (auto it = doc.find("id"); it != doc.end() && it->is_string()) id = it->get<std::string>();
    }
    if (!doc.is_object() || !doc.contains("id") || !doc["id"].is_string())
      throw DecodeError("bad_request", "request must be an object with a string id");
    const auto req = parse_request(doc);
    return outcome_to_json(id, decoder.step(req)).dump();
  } catch (const DecodeError& e) {
    spdlog::debug("request {} rejected: {} ({})", id, e.code(), e.what());
    return json{{"id", id}, {"error", e.code()}}.dump();
  } catch (const std::exception& e) {
    spdlog::error("request {} failed: {}", id, e.what());
    return json{{"id", id}, {"error", "internal"}}.dump();
  }
}

void serve_stream(std::istream& in, std::ostream& out, const Decoder& decoder) {
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out << handle_request_line(line, decoder) << '\n';
    out.flush();
  }
}

SocketServer::SocketServer(const Decoder& decoder, const std::string& host, std::uint16_t port)
    : decoder_(decoder) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw IoError(std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    throw ValidationError("listen address must be an IPv4 literal, got " + host);
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0 || ::listen(listen_fd_, 16) < 0) {
    const std::string why = std::strerror(errno);
    ::close(listen_fd_);
    throw IoError(fmt::format("cannot listen on {}:{}: {}", host, port, why));
  }
  socklen_t len = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

SocketServer::~SocketServer() {
  stop();
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

void SocketServer::stop() {
  if (!stopping_.exchange(true) && listen_fd_ >= 0) ::shutdown(listen_fd_, SHUT_RDWR);
}

void SocketServer::run() {
  std::vector<std::jthread> connections;
  while (!stopping_) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (stopping_ || errno != EINTR) break;
      continue;
    }
    connections.emplace_back([this, fd] {
      std::string pending;
      char buf[65536];
      for (;;) {
        const ssize_t n = ::recv(fd, buf, sizeof(buf), 0);
        if (n <= 0) break;
        pending.append(buf, static_cast<std::size_t>(n));
        std::size_t nl;
        while ((nl = pending.find('\n')) != std::string::npos) {
          std::string line = pending.substr(0, nl);
          pending.erase(0, nl + 1);
          if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
          std::string reply = handle_request_line(line, decoder_) + "\n";
          std::size_t sent = 0;
          while (sent < reply.size()) {
            const ssize_t w = ::send(fd, reply.data() + sent, reply.size() - sent, MSG_NOSIGNAL);
            if (w <= 0) break;
            sent += static_cast<std::size_t>(w);
          }
        }
      }
      ::close(fd);
    });
  }
}

}  // namespace semsam
