#pragma once

// Synchronous message rounds between a price coordinator and market agents.
// One round: the coordinator broadcasts a price vector, every agent answers
// with exactly one reply. Two transports share these semantics: a
// deterministic in-process queue and newline-delimited JSON over loopback TCP.

#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "gridnum/model.hpp"

namespace gridnum {

/// Transport failure or missed round deadline.
class BusError : public Error {
 public:
  using Error::Error;
};

enum class Direction { price_broadcast, demand_reply, supply_reply };

std::string to_string(Direction d);
Direction direction_from_string(const std::string& s);

struct RoundMessage {
  Direction direction = Direction::price_broadcast;
  int round = 0;
  int agent = -1;
  /// Prices (broadcast), net grid load q + r - d (demand reply) or total
  /// supply S + g (supply reply). One entry per slot.
  std::vector<double> payload;
  /// Demand reply detail.
  std::vector<double> q, r, d;
  /// Supply reply detail.
  std::vector<double> supply, spot_g;
  /// Optimal surplus (users) or profit (provider) at the broadcast prices.
  double value = 0.0;
  /// Right derivative of payload with respect to the own-slot price.
  std::optional<std::vector<double>> slope;

  friend bool operator==(const RoundMessage&, const RoundMessage&) = default;
};

nlohmann::json to_json(const RoundMessage& m);
RoundMessage message_from_json(const nlohmann::json& j);

class Agent {
 public:
  virtual ~Agent() = default;
  virtual RoundMessage respond(const RoundMessage& broadcast) = 0;
};

class MessageBus {
 public:
  virtual ~MessageBus() = default;
  /// Delivers the broadcast to every agent and returns their replies ordered
  /// by agent index.
  virtual std::vector<RoundMessage> exchange(const RoundMessage& broadcast) = 0;
  virtual std::size_t agent_count() const = 0;
};

class InProcessBus : public MessageBus {
 public:
  explicit InProcessBus(std::vector<std::unique_ptr<Agent>> agents) : agents_(std::move(agents)) {}
  std::vector<RoundMessage> exchange(const RoundMessage& broadcast) override;
  std::size_t agent_count() const override { return agents_.size(); }

 private:
  std::vector<std::unique_ptr<Agent>> agents_;
};

/// Listens on 127.0.0.1:port (0 picks a free port), starts one thread per
/// agent that connects as a client, and exchanges one JSON frame per line.
class TcpBus : public MessageBus {
 public:
  TcpBus(std::vector<std::unique_ptr<Agent>> agents, int port = 0,
         std::chrono::milliseconds round_timeout = std::chrono::seconds(5));
  ~TcpBus() override;
  TcpBus(const TcpBus&) = delete;
  TcpBus& operator=(const TcpBus&) = delete;

  std::vector<RoundMessage> exchange(const RoundMessage& broadcast) override;
  std::size_t agent_count() const override { return agents_.size(); }
  int port() const { return port_; }

 private:
  void shutdown();

  std::vector<std::unique_ptr<Agent>> agents_;
  std::chrono::milliseconds timeout_;
  int listen_fd_ = -1;
  int port_ = 0;
  std::vector<int> conn_;             // by agent index
  std::vector<std::string> pending_;  // partial input per connection
  std::vector<std::thread> threads_;
};

}  // namespace gridnum
