#include "deal/service/server.hpp"

#include <httplib.h>

#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

namespace deal::service {

using nlohmann::json;

struct HttpService::Impl {
    std::shared_ptr<const ServiceState> state;
    httplib::Server server;
};

namespace {

void send_error(httplib::Response& res, int status, const std::string& message) {
    res.status = status;
    res.set_content(json{{"error", message}}.dump(), "application/json");
}

}  // namespace

HttpService::HttpService(std::shared_ptr<const ServiceState> state) : impl_(std::make_unique<Impl>()) {
    impl_->state = std::move(state);
    auto& srv = impl_->server;
    auto st = impl_->state;
    srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                             {"Access-Control-Allow-Headers", "Content-Type"},
                             {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    srv.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    srv.Get("/health", [st](const httplib::Request&, httplib::Response& res) {
        res.set_content(json{{"status", "ok"}, {"checkpoint_loaded", static_cast<bool>(st->model)},
                             {"images", st->images.size()}}
                            .dump(),
                        "application/json");
    });
    srv.Get("/images", [st](const httplib::Request&, httplib::Response& res) {
        json list = json::array();
        for (const auto& [id, entry] : st->images) {
            list.push_back({{"id", id}, {"width", entry.image.width()}, {"height", entry.image.height()}});
        }
        res.set_content(json{{"images", list}}.dump(), "application/json");
    });
    srv.Get(R"(/images/([^/]+))", [st](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        auto it = st->images.find(id);
        if (it == st->images.end()) return send_error(res, 404, "unknown image id '" + id + "'");
        std::ifstream in(it->second.path, std::ios::binary);
        if (!in) return send_error(res, 500, "image file vanished: " + it->second.path.string());
        std::ostringstream bytes;
        bytes << in.rdbuf();
        res.set_content(bytes.str(), "image/png");
    });
    srv.Post("/infer", [st](const httplib::Request& req, httplib::Response& res) {
        try {
            const auto response = handle_infer(parse_infer_request(req.body), *st);
            res.set_content(infer_response_to_json(response), "application/json");
        } catch (const InferError& e) {
            send_error(res, e.status(), e.what());
        } catch (const std::exception& e) {
            send_error(res, 500, e.what());
        }
    });
}

HttpService::~HttpService() { stop(); }

int HttpService::bind(const std::string& host, int port) {
    if (port == 0) {
        const int bound = impl_->server.bind_to_any_port(host);
        if (bound < 0) throw std::runtime_error("cannot bind " + host);
        return bound;
    }
    if (!impl_->server.bind_to_port(host, port)) {
        throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    }
    return port;
}

void HttpService::listen() { impl_->server.listen_after_bind(); }

void HttpService::stop() {
    if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

}  // namespace deal::service
