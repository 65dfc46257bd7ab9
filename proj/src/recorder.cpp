#include "adaptagent/recorder.hpp"

#include <filesystem>
#include <random>
#include <thread>

#include <httplib.h>

#include "adaptagent/text.hpp"

namespace adaptagent::recorder {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

std::string_view to_string(SessionStatus s) {
    switch (s) {
        case SessionStatus::active: return "ACTIVE";
        case SessionStatus::succeeded: return "SUCCEEDED";
        case SessionStatus::abandoned: return "ABANDONED";
    }
    return "ACTIVE";
}

struct RecorderService::Session {
    std::string session_id;
    const webenv::SiteSpec* site = nullptr;
    const webenv::Task* task = nullptr;
    webenv::EnvState state;
    std::vector<demostore::RecordStep> steps;
    SessionStatus status = SessionStatus::active;
    std::string demo_path;
    Clock::time_point last_used = Clock::now();
    std::mutex mutex;
};

struct RecorderService::Server {
    httplib::Server http;
    std::thread thread;
};

namespace {

Reply error_reply(int status, std::string_view name, const std::string& detail) {
    return {status, json{{"error", name}, {"detail", detail}}};
}

Reply unknown_session(const std::string& id) { return error_reply(404, "UnknownSession", "no session " + id); }

}  // namespace

RecorderService::RecorderService(webenv::Corpus corpus, RecorderConfig config)
    : corpus_(std::move(corpus)), config_(std::move(config)) {}

RecorderService::~RecorderService() { stop(); }

Reply RecorderService::corpus_listing() const {
    json sites = json::array();
    for (const auto& d : corpus_.domains) {
        for (const auto& s : d.sites) {
            json tasks = json::array();
            for (const auto& t : s.tasks) {
                tasks.push_back(json{{"task_id", t.task_id}, {"instruction", t.instruction}, {"oracle_len", t.oracle_len}});
            }
            sites.push_back(json{{"site_id", s.site_id}, {"domain_id", s.domain_id}, {"tasks", tasks}});
        }
    }
    return {200, json{{"seed", corpus_.seed}, {"corpus_digest", hex64(webenv::corpus_digest(corpus_))}, {"sites", sites}}};
}

json RecorderService::observation_body(const Session& s) const {
    const auto obs = demostore::observe(*s.site, *s.task, s.state, config_.top_k);
    return json{{"session_id", s.session_id},
                {"site_id", s.site->site_id},
                {"task_id", s.task->task_id},
                {"instruction", s.task->instruction},
                {"observation", demostore::observation_json(obs)},
                {"state", s.state},
                {"terminated", s.state.terminated},
                {"success", s.state.success},
                {"status", to_string(s.status)},
                {"steps", s.steps.size()}};
}

std::shared_ptr<RecorderService::Session> RecorderService::find(const std::string& id) {
    purge_expired();
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) return nullptr;
    return it->second;
}

Reply RecorderService::create_session(const json& body) {
    purge_expired();
    if (!body.is_object() || !body.contains("task_id") || !body.at("task_id").is_string()) {
        return error_reply(400, "InvalidArgument", "body needs task_id");
    }
    const auto task_id = body.at("task_id").get<std::string>();
    const webenv::Task* task = nullptr;
    try {
        task = &corpus_.task(task_id);
    } catch (const Error& e) {
        return error_reply(404, e.name(), e.what());
    }
    if (body.contains("site_id") && body.at("site_id").is_string() && body.at("site_id").get<std::string>() != task->site_id) {
        return error_reply(404, "TaskSiteMismatch", task_id + " is not on " + body.at("site_id").get<std::string>());
    }
    auto s = std::make_shared<Session>();
    s->site = &corpus_.site_of(*task);
    s->task = task;
    s->state = webenv::reset(*s->site, *task);
    {
        std::lock_guard lock(mutex_);
        std::random_device rd;
        s->session_id = hex64(derive_seed((static_cast<std::uint64_t>(rd()) << 32) ^ rd(), ++counter_));
        sessions_[s->session_id] = s;
    }
    return {201, observation_body(*s)};
}

Reply RecorderService::observation(const std::string& session_id) {
    auto s = find(session_id);
    if (!s) return unknown_session(session_id);
    std::unique_lock lock(s->mutex);
    s->last_used = Clock::now();
    return {200, observation_body(*s)};
}

Reply RecorderService::act(const std::string& session_id, const json& body) {
    auto s = find(session_id);
    if (!s) return unknown_session(session_id);
    std::unique_lock lock(s->mutex, std::try_to_lock);
    if (!lock.owns_lock()) return error_reply(409, "ConcurrentMutation", "session is busy with another request");
    s->last_used = Clock::now();
    if (s->status != SessionStatus::active || s->state.terminated) {
        return error_reply(409, "AlreadyTerminated", "session " + session_id + " is " + std::string(to_string(s->status)));
    }
    webenv::Action action;
    try {
        action.element_id = body.at("element_id").get<std::string>();
        action.operation = parse_operation(body.at("operation").get<std::string>());
        if (body.contains("value") && !body.at("value").is_null()) action.value = body.at("value").get<std::string>();
    } catch (const Error& e) {
        return error_reply(422, e.name(), e.what());
    } catch (const json::exception& e) {
        return error_reply(422, "InvalidArgument", e.what());
    }
    const auto obs = demostore::observe(*s->site, *s->task, s->state, config_.top_k);
    const auto page_id = s->state.current_page_id;
    try {
        s->state = webenv::step(s->state, *s->site, *s->task, action);
    } catch (const Error& e) {
        return error_reply(422, e.name(), e.what());
    }
    s->steps.push_back({page_id, demostore::layout_digest(obs.layout), demostore::candidates_digest(obs.candidates), action});
    if (s->state.success) {
        s->status = SessionStatus::succeeded;
    } else if (s->state.terminated) {
        s->status = SessionStatus::abandoned;
    }
    return {200, observation_body(*s)};
}

Reply RecorderService::finish(const std::string& session_id) {
    auto s = find(session_id);
    if (!s) return unknown_session(session_id);
    std::unique_lock lock(s->mutex, std::try_to_lock);
    if (!lock.owns_lock()) return error_reply(409, "ConcurrentMutation", "session is busy with another request");
    s->last_used = Clock::now();
    if (s->status == SessionStatus::succeeded) {
        if (s->demo_path.empty()) {
            demostore::TrajectoryRecord record;
            record.task_id = s->task->task_id;
            record.site_id = s->site->site_id;
            record.annotator = demostore::Annotator::human;
            record.steps = s->steps;
            record.created_at = demostore::now_iso8601();
            std::error_code ec;
            std::filesystem::create_directories(config_.demo_dir, ec);
            const auto path = (std::filesystem::path(config_.demo_dir) /
                               (s->task->task_id + "_" + s->session_id + demostore::kDemoExtension))
                                  .string();
            try {
                demostore::save(record, path);
            } catch (const Error& e) {
                return error_reply(500, e.name(), e.what());
            }
            s->demo_path = path;
        }
        return {200, json{{"session_id", session_id}, {"status", to_string(s->status)}, {"path", s->demo_path}}};
    }
    s->status = SessionStatus::abandoned;
    return {200, json{{"session_id", session_id}, {"status", to_string(s->status)}, {"path", nullptr}}};
}

std::size_t RecorderService::purge_expired() {
    const auto now = Clock::now();
    std::lock_guard lock(mutex_);
    std::size_t dropped = 0;
    for (auto it = sessions_.begin(); it != sessions_.end();) {
        std::unique_lock session_lock(it->second->mutex, std::try_to_lock);
        if (session_lock.owns_lock() && now - it->second->last_used > config_.ttl) {
            session_lock.unlock();
            it = sessions_.erase(it);
            ++dropped;
        } else {
            ++it;
        }
    }
    return dropped;
}

std::size_t RecorderService::session_count() const {
    std::lock_guard lock(mutex_);
    return sessions_.size();
}

void RecorderService::mount() {
    server_ = std::make_unique<Server>();
    auto& http = server_->http;
    http.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Headers", "Content-Type"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    auto send = [](httplib::Response& res, const Reply& reply) {
        res.status = reply.status;
        res.set_content(reply.body.dump(), "application/json");
    };
    auto parse_body = [](const httplib::Request& req) -> std::optional<json> {
        if (req.body.empty()) return json::object();
        try {
            return json::parse(req.body);
        } catch (const json::exception&) {
            return std::nullopt;
        }
    };
    http.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    http.Get("/corpus", [this, send](const httplib::Request&, httplib::Response& res) { send(res, corpus_listing()); });
    http.Post("/sessions", [this, send, parse_body](const httplib::Request& req, httplib::Response& res) {
        const auto body = parse_body(req);
        send(res, body ? create_session(*body) : error_reply(400, "MalformedFile", "body is not JSON"));
    });
    http.Get(R"(/sessions/([^/]+)/observation)", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, observation(req.matches[1]));
    });
    http.Post(R"(/sessions/([^/]+)/action)", [this, send, parse_body](const httplib::Request& req, httplib::Response& res) {
        const auto body = parse_body(req);
        send(res, body ? act(req.matches[1], *body) : error_reply(400, "MalformedFile", "body is not JSON"));
    });
    http.Post(R"(/sessions/([^/]+)/finish)", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, finish(req.matches[1]));
    });
}

bool RecorderService::listen(const std::string& host, int port) {
    mount();
    return server_->http.listen(host, port);
}

int RecorderService::start_background(const std::string& host) {
    mount();
    const int port = server_->http.bind_to_any_port(host);
    if (port < 0) throw Error(ErrorCode::IoFailure, "cannot bind " + host);
    server_->thread = std::thread([this] { server_->http.listen_after_bind(); });
    server_->http.wait_until_ready();
    return port;
}

void RecorderService::stop() {
    if (!server_) return;
    server_->http.stop();
    if (server_->thread.joinable()) server_->thread.join();
    server_.reset();
}

}  // namespace adaptagent::recorder
