#include "gridnum/bus.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>

namespace gridnum {

using nlohmann::json;

std::string to_string(Direction d) {
  switch (d) {
    case Direction::price_broadcast:
      return "price_broadcast";
    case Direction::demand_reply:
      return "demand_reply";
    case Direction::supply_reply:
      return "supply_reply";
  }
  return "unknown";
}

Direction direction_from_string(const std::string& s) {
  if (s == "price_broadcast") return Direction::price_broadcast;
  if (s == "demand_reply") return Direction::demand_reply;
  if (s == "supply_reply") return Direction::supply_reply;
  throw BusError("unknown message direction: " + s);
}

json to_json(const RoundMessage& m) {
  json j;
  j["round"] = m.round;
  j["direction"] = to_string(m.direction);
  j["payload"] = m.payload;
  if (m.agent >= 0) j["agent"] = m.agent;
  if (m.direction == Direction::price_broadcast) return j;
  j["value"] = m.value;
  auto put = [&](const char* key, const std::vector<double>& v) {
    if (!v.empty()) j[key] = v;
  };
  put("q", m.q);
  put("r", m.r);
  put("d", m.d);
  put("supply", m.supply);
  put("spot_g", m.spot_g);
  if (m.slope) j["slope"] = *m.slope;
  return j;
}

RoundMessage message_from_json(const json& j) {
  try {
    RoundMessage m;
    m.round = j.at("round").get<int>();
    m.direction = direction_from_string(j.at("direction").get<std::string>());
    m.payload = j.at("payload").get<std::vector<double>>();
    if (j.contains("agent")) m.agent = j.at("agent").get<int>();
    if (j.contains("value")) m.value = j.at("value").get<double>();
    auto get = [&](const char* key, std::vector<double>& v) {
      if (j.contains(key)) v = j.at(key).get<std::vector<double>>();
    };
    get("q", m.q);
    get("r", m.r);
    get("d", m.d);
    get("supply", m.supply);
    get("spot_g", m.spot_g);
    if (j.contains("slope")) m.slope = j.at("slope").get<std::vector<double>>();
    return m;
  } catch (const json::exception& e) {
    throw BusError(std::string("malformed frame: ") + e.what());
  }
}

std::vector<RoundMessage> InProcessBus::exchange(const RoundMessage& broadcast) {
  std::vector<RoundMessage> replies;
  replies.reserve(agents_.size());
  for (std::size_t k = 0; k < agents_.size(); ++k) {
    RoundMessage r = agents_[k]->respond(broadcast);
    r.agent = static_cast<int>(k);
    r.round = broadcast.round;
    replies.push_back(std::move(r));
  }
  return replies;
}

// ---------------------------------------------------------------------------
// Loopback TCP transport

namespace {

bool send_all(int fd, const std::string& data) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    sent += static_cast<std::size_t>(n);
  }
  return true;
}

// Blocking line reader for the agent side. Returns false on EOF or error.
bool read_line(int fd, std::string& buffer, std::string& line) {
  while (true) {
    const auto pos = buffer.find('\n');
    if (pos != std::string::npos) {
      line = buffer.substr(0, pos);
      buffer.erase(0, pos + 1);
      return true;
    }
    char chunk[65536];
    const ssize_t n = ::recv(fd, chunk, sizeof chunk, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    buffer.append(chunk, static_cast<std::size_t>(n));
  }
}

void agent_loop(Agent* agent, int index, int port) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) return;
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    ::close(fd);
    return;
  }
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  if (!send_all(fd, json{{"hello", index}}.dump() + "\n")) {
    ::close(fd);
    return;
  }
  std::string buffer;
  std::string line;
  try {
    while (read_line(fd, buffer, line)) {
      const RoundMessage in = message_from_json(json::parse(line));
      RoundMessage out = agent->respond(in);
      out.agent = index;
      out.round = in.round;
      if (!send_all(fd, to_json(out).dump() + "\n")) break;
    }
  } catch (const std::exception&) {
    // The coordinator sees the closed connection and reports the failure.
  }
  ::close(fd);
}

int remaining_ms(std::chrono::steady_clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
  return static_cast<int>(std::max<long long>(0, left.count()));
}

}  // namespace

TcpBus::TcpBus(std::vector<std::unique_ptr<Agent>> agents, int port, std::chrono::milliseconds round_timeout)
    : agents_(std::move(agents)), timeout_(round_timeout) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw BusError(std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
      ::listen(listen_fd_, static_cast<int>(agents_.size()) + 4) != 0) {
    const std::string why = std::strerror(errno);
    ::close(listen_fd_);
    throw BusError("cannot listen on port " + std::to_string(port) + ": " + why);
  }
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);

  const std::size_t n = agents_.size();
  conn_.assign(n, -1);
  pending_.assign(n, {});
  for (std::size_t k = 0; k < n; ++k) threads_.emplace_back(agent_loop, agents_[k].get(), static_cast<int>(k), port_);

  // Accept every agent and read its hello frame.
  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  std::size_t joined = 0;
  try {
    while (joined < n) {
      pollfd pfd{listen_fd_, POLLIN, 0};
      if (::poll(&pfd, 1, remaining_ms(deadline)) <= 0) throw BusError("agents did not connect before the timeout");
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) continue;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      std::string buffer;
      std::string line;
      pollfd cfd{fd, POLLIN, 0};
      while (buffer.find('\n') == std::string::npos) {
        if (::poll(&cfd, 1, remaining_ms(deadline)) <= 0) {
          ::close(fd);
          throw BusError("agent hello timed out");
        }
        char chunk[256];
        const ssize_t got = ::recv(fd, chunk, sizeof chunk, 0);
        if (got <= 0) {
          ::close(fd);
          throw BusError("agent closed during handshake");
        }
        buffer.append(chunk, static_cast<std::size_t>(got));
      }
      const auto pos = buffer.find('\n');
      int index = -1;
      try {
        index = json::parse(buffer.substr(0, pos)).at("hello").get<int>();
      } catch (const json::exception&) {
      }
      if (index < 0 || index >= static_cast<int>(n) || conn_[index] >= 0) {
        ::close(fd);
        throw BusError("invalid agent hello");
      }
      conn_[index] = fd;
      pending_[index] = buffer.substr(pos + 1);
      ++joined;
    }
  } catch (...) {
    shutdown();
    throw;
  }
}

TcpBus::~TcpBus() { shutdown(); }

void TcpBus::shutdown() {
  for (int& fd : conn_) {
    if (fd >= 0) {
      ::shutdown(fd, SHUT_RDWR);
      ::close(fd);
    }
    fd = -1;
  }
  if (listen_fd_ >= 0) {
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
  for (auto& th : threads_)
    if (th.joinable()) th.join();
  threads_.clear();
}

std::vector<RoundMessage> TcpBus::exchange(const RoundMessage& broadcast) {
  const std::size_t n = agents_.size();
  const std::string frame = to_json(broadcast).dump() + "\n";
  for (std::size_t k = 0; k < n; ++k)
    if (conn_[k] < 0 || !send_all(conn_[k], frame))
      throw BusError("agent " + std::to_string(k) + " unreachable in round " + std::to_string(broadcast.round));

  std::vector<std::optional<RoundMessage>> got(n);
  std::size_t missing = n;
  auto take_lines = [&](std::size_t k) {
    std::size_t pos;
    while (!got[k] && (pos = pending_[k].find('\n')) != std::string::npos) {
      json j;
      try {
        j = json::parse(pending_[k].substr(0, pos));
      } catch (const json::exception& e) {
        throw BusError(std::string("malformed frame: ") + e.what());
      }
      pending_[k].erase(0, pos + 1);
      RoundMessage m = message_from_json(j);
      if (m.round != broadcast.round) continue;  // stale frame
      m.agent = static_cast<int>(k);
      got[k] = std::move(m);
      --missing;
    }
  };
  for (std::size_t k = 0; k < n; ++k) take_lines(k);

  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  while (missing > 0) {
    std::vector<pollfd> fds;
    std::vector<std::size_t> who;
    for (std::size_t k = 0; k < n; ++k)
      if (!got[k]) {
        fds.push_back({conn_[k], POLLIN, 0});
        who.push_back(k);
      }
    const int ready = ::poll(fds.data(), fds.size(), remaining_ms(deadline));
    if (ready < 0 && errno == EINTR) continue;
    if (ready <= 0) throw BusError("round " + std::to_string(broadcast.round) + " timed out");
    for (std::size_t f = 0; f < fds.size(); ++f) {
      if (!(fds[f].revents & (POLLIN | POLLHUP | POLLERR))) continue;
      const std::size_t k = who[f];
      char chunk[65536];
      const ssize_t len = ::recv(conn_[k], chunk, sizeof chunk, 0);
      if (len <= 0) throw BusError("agent " + std::to_string(k) + " disconnected");
      pending_[k].append(chunk, static_cast<std::size_t>(len));
      take_lines(k);
    }
  }
  std::vector<RoundMessage> replies;
  replies.reserve(n);
  for (auto& m : got) replies.push_back(std::move(*m));
  return replies;
}

}  // namespace gridnum
