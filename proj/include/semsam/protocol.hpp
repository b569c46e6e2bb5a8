#pragma once

// JSON-lines wire protocol for the decoder. One request object per line in,
// exactly one response object per line out.
//
//   request:  {"id", "logits_b64", "temperature", "filter", "keep", "select", "seed"}
//   response: {"id", "token", "deferred", "candidates": [{"token","p","score"}]}
//             or {"id", "error": code}

#include <atomic>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "semsam/decoder.hpp"

namespace semsam {

/// Throws DecodeError with a wire code on malformed input.
DecodeRequest parse_request(const nlohmann::json& doc);

nlohmann::json outcome_to_json(const std::string& id, const StepOutcome& outcome);

/// Always returns a single-line JSON response, never throws.
std::string handle_request_line(std::string_view line, const Decoder& decoder);

/// Encode logits as the protocol's base64 little-endian f32 payload.
std::string encode_logits(std::span<const float> logits);

/// Processes requests until EOF. Blank lines are ignored.
void serve_stream(std::istream& in, std::ostream& out, const Decoder& decoder);

/// TCP listener; each connection is served on its own thread, in request order.
class SocketServer {
 public:
  SocketServer(const Decoder& decoder, const std::string& host, std::uint16_t port);
  ~SocketServer();
  SocketServer(const SocketServer&) = delete;
  SocketServer& operator=(const SocketServer&) = delete;

  /// Port actually bound (useful when constructed with port 0).
  std::uint16_t port() const { return port_; }

  /// Accept loop; returns after stop().
  void run();
  void stop();

 private:
  const Decoder& decoder_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
};

}  // namespace semsam
