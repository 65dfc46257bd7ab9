#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include <json.hpp>

#include "adaptagent/demostore.hpp"
#include "adaptagent/webenv.hpp"

namespace adaptagent::recorder {

enum class SessionStatus { active, succeeded, abandoned };
std::string_view to_string(SessionStatus s);

struct RecorderConfig {
    std::string demo_dir = "demos";
    std::chrono::seconds ttl{30 * 60};
    int top_k = domkit::kDefaultTopK;
};

struct Reply {
    int status = 200;
    nlohmann::json body;
};

// Live recording sessions over an immutable corpus. Handlers are safe to
// call from many threads; mutations of one session are serialized and a
// mutation that finds the session busy is refused with 409.
class RecorderService {
public:
    RecorderService(webenv::Corpus corpus, RecorderConfig config = {});
    ~RecorderService();

    Reply corpus_listing() const;
    Reply create_session(const nlohmann::json& body);
    Reply observation(const std::string& session_id);
    Reply act(const std::string& session_id, const nlohmann::json& body);
    Reply finish(const std::string& session_id);

    // Drops sessions idle for longer than the TTL; returns how many.
    std::size_t purge_expired();
    std::size_t session_count() const;

    // Blocking HTTP server. Returns false when the port cannot be bound.
    bool listen(const std::string& host, int port);
    // Binds to a free port and serves on a background thread; returns the port.
    int start_background(const std::string& host = "127.0.0.1");
    void stop();

private:
    struct Session;
    std::shared_ptr<Session> find(const std::string& id);
    nlohmann::json observation_body(const Session& s) const;
    void mount();

    webenv::Corpus corpus_;
    RecorderConfig config_;
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::uint64_t counter_ = 0;
    struct Server;
    std::unique_ptr<Server> server_;
};

}  // namespace adaptagent::recorder
