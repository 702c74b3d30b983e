#include "carm/http_api.hpp"

#include <chrono>
#include <mutex>

#include "httplib.h"
#include "json.hpp"

#include "carm/error.hpp"

namespace carm {

namespace {

int status_for(Err code) {
    switch (code) {
    case Err::UnknownAgent:
        return 404;
    case Err::IllegalTransition:
        return 409;
    case Err::IoFailure:
        return 500;
    default:
        return 400; // validation-class failures
    }
}

void write_error(httplib::Response& res, Err code, const std::string& message) {
    nlohmann::ordered_json body;
    body["error"] = to_string(code);
    const std::string prefix = std::string(to_string(code)) + ": ";
    body["message"] = message.rfind(prefix, 0) == 0 ? message.substr(prefix.size()) : message;
    res.status = status_for(code);
    res.set_content(body.dump(), "application/json");
}

void write_json(httplib::Response& res, const nlohmann::ordered_json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

// Wraps a handler so every carm::Error is rendered as a JSON error response.
template <typename Fn>
auto guarded(Fn fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
        try {
            fn(req, res);
        } catch (const Error& e) {
            write_error(res, e.code(), e.what());
        } catch (const std::exception& e) {
            nlohmann::ordered_json body;
            body["error"] = "Internal";
            body["message"] = e.what();
            res.status = 500;
            res.set_content(body.dump(), "application/json");
        }
    };
}

nlohmann::json parse_body(const httplib::Request& req) {
    nlohmann::json body = nlohmann::json::parse(req.body, nullptr, false);
    if (body.is_discarded()) {
        throw Error(Err::UnknownField, "request body is not valid JSON");
    }
    return body;
}

std::uint64_t parse_id(const std::string& raw) {
    try {
        return std::stoull(raw);
    } catch (const std::exception&) {
        throw Error(Err::UnknownAgent, "bad agent id '" + raw + "'");
    }
}

nlohmann::ordered_json entry_json(const AgentStoreEntry& entry) {
    nlohmann::ordered_json j = to_json(entry.spec);
    nlohmann::ordered_json history = nlohmann::ordered_json::array();
    for (const auto& [tick, status] : entry.history) {
        nlohmann::ordered_json item;
        item["tick"] = tick;
        item["status"] = to_string(status);
        history.push_back(std::move(item));
    }
    j["history"] = std::move(history);
    return j;
}

std::mutex& registry_mutex() {
    static std::mutex m;
    return m;
}

} // namespace

ControllerServer::ControllerServer(AgentStore& store, ModelRegistry& registry,
                                   std::function<long()> tick_source, std::string registry_dir)
    : store_(store), registry_(registry), tick_source_(std::move(tick_source)),
      registry_dir_(std::move(registry_dir)), server_(std::make_unique<httplib::Server>()) {
    install_routes();
}

ControllerServer::~ControllerServer() { stop(); }

void ControllerServer::install_routes() {
    httplib::Server& svr = *server_;

    svr.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
        res.status = 200;
        res.set_content("ok", "text/plain");
    });

    svr.Post("/agents", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 nlohmann::json body = parse_body(req);
                 std::uint64_t id = store_.create(body, tick_source_());
                 write_json(res, entry_json(store_.get(id)), 201);
             }));

    svr.Get("/agents", guarded([this](const httplib::Request& req, httplib::Response& res) {
                std::optional<AgentStatus> status;
                std::optional<Scope> scope;
                if (req.has_param("status")) {
                    status = status_from_string(req.get_param_value("status"));
                    if (!status) {
                        throw Error(Err::UnknownField,
                                    "unknown status filter '" + req.get_param_value("status") + "'");
                    }
                }
                if (req.has_param("scope")) {
                    scope = scope_from_string(req.get_param_value("scope"));
                    if (!scope) {
                        throw Error(Err::UnknownScope,
                                    "unknown scope filter '" + req.get_param_value("scope") + "'");
                    }
                }
                nlohmann::ordered_json out = nlohmann::ordered_json::array();
                for (const AgentStoreEntry& entry : store_.list(status, scope)) {
                    out.push_back(entry_json(entry));
                }
                write_json(res, out);
            }));

    svr.Get(R"(/agents/(\d+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                write_json(res, entry_json(store_.get(parse_id(req.matches[1]))));
            }));

    svr.Patch(R"(/agents/(\d+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  std::uint64_t id = parse_id(req.matches[1]);
                  store_.update(id, parse_body(req), tick_source_());
                  write_json(res, entry_json(store_.get(id)));
              }));

    svr.Delete(R"(/agents/(\d+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                   store_.remove(parse_id(req.matches[1]), tick_source_());
                   res.status = 204;
               }));

    svr.Post("/optimize", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 nlohmann::json body = parse_body(req);
                 if (!body.contains("deployment") || !body["deployment"].is_string()) {
                     throw Error(Err::MissingFeature, "request lacks 'deployment'");
                 }
                 if (!body.contains("before") || !body.contains("after")) {
                     throw Error(Err::MissingFeature, "request lacks 'before'/'after' snapshots");
                 }
                 StateSnapshot before = StateSnapshot::from_json(body["before"]);
                 StateSnapshot after = StateSnapshot::from_json(body["after"]);
                 std::lock_guard<std::mutex> lock(registry_mutex());
                 const QModel& model = registry_.select_model(body["deployment"].get<std::string>());
                 auto [action, q_values] = predict(model, featurize(before, after, model.scales));
                 nlohmann::ordered_json out;
                 out["action_code"] = int(action);
                 out["q_values"] = q_values;
                 write_json(res, out);
             }));

    svr.Post("/feedback", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 FeedbackRecord record = FeedbackRecord::from_json(parse_body(req));
                 std::lock_guard<std::mutex> lock(registry_mutex());
                 registry_.feedback(record);
                 if (!registry_dir_.empty()) registry_.save(registry_dir_);
                 nlohmann::ordered_json out;
                 out["deployment"] = record.deployment;
                 out["specialized"] = true;
                 write_json(res, out);
             }));
}

int ControllerServer::start(const std::string& host) {
    int port = server_->bind_to_any_port(host);
    if (port <= 0) throw Error(Err::ConnectionFailure, "cannot bind controller to '" + host + "'");
    running_ = true;
    serve_thread_ = std::thread([this] { server_->listen_after_bind(); });
    while (!server_->is_running()) {
        std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
    return port;
}

bool ControllerServer::listen(const std::string& host, int port) {
    running_ = true;
    return server_->listen(host, port);
}

void ControllerServer::stop() {
    if (!running_.exchange(false)) return;
    server_->stop();
    if (serve_thread_.joinable()) serve_thread_.join();
}

std::pair<std::string, int> split_listen_address(const std::string& address) {
    std::string rest = address;
    auto scheme = rest.find("://");
    if (scheme != std::string::npos) rest = rest.substr(scheme + 3);
    auto slash = rest.find('/');
    if (slash != std::string::npos) rest = rest.substr(0, slash);
    auto colon = rest.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 >= rest.size()) {
        throw Error(Err::ConnectionFailure, "address '" + address + "' is not host:port");
    }
    try {
        int port = std::stoi(rest.substr(colon + 1));
        if (port <= 0 || port > 65535) throw std::out_of_range("port");
        return {rest.substr(0, colon), port};
    } catch (const std::exception&) {
        throw Error(Err::ConnectionFailure, "address '" + address + "' has a bad port");
    }
}

} // namespace carm
