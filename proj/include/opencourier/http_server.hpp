#pragma once

#include <algorithm>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "opencourier/gateway.hpp"

namespace opencourier::http {

inline gateway::Request to_gateway(const httplib::Request& req) {
    gateway::Request r;
    r.method = req.method;
    r.path = req.path;
    for (const auto& [k, v] : req.params) r.query[k] = v;
    for (const auto& [k, v] : req.headers) {
        std::string key = k;
        std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
        r.headers[key] = v;
    }
    r.body = req.body;
    return r;
}

/// Binds a Gateway to a socket. All requests, including unknown paths, go
/// through the gateway so errors share one envelope.
class Server {
public:
    Server(gateway::Gateway& gw, std::vector<std::string> cors_origins = {"*"}) : gw_(&gw), cors_(std::move(cors_origins)) {
        auto handler = [this](const httplib::Request& req, httplib::Response& res) { serve(req, res); };
        const char* any = R"(/.*)";
        svr_.set_tcp_nodelay(true);
        svr_.Get(any, handler);
        svr_.Post(any, handler);
        svr_.Put(any, handler);
        svr_.Patch(any, handler);
        svr_.Delete(any, handler);
        svr_.Options(any, [this](const httplib::Request& req, httplib::Response& res) {
            cors(req, res);
            res.status = 204;
        });
    }

    /// Binds; port 0 picks a free port. Returns the bound port or -1.
    int bind(const std::string& host, int port) {
        if (port == 0) return svr_.bind_to_any_port(host);
        return svr_.bind_to_port(host, port) ? port : -1;
    }

    /// Blocks until stop().
    bool listen() { return svr_.listen_after_bind(); }

    void stop() { svr_.stop(); }

    void wait_until_ready() { svr_.wait_until_ready(); }

private:
    void cors(const httplib::Request& req, httplib::Response& res) const {
        const auto origin = req.get_header_value("Origin");
        if (origin.empty()) return;
        const bool any = std::find(cors_.begin(), cors_.end(), "*") != cors_.end();
        if (!any && std::find(cors_.begin(), cors_.end(), origin) == cors_.end()) return;
        res.set_header("Access-Control-Allow-Origin", any ? "*" : origin);
        res.set_header("Access-Control-Allow-Methods", "GET, POST, PUT, PATCH, DELETE, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Authorization, Content-Type, Idempotency-Key, If-Match");
        res.set_header("Access-Control-Expose-Headers", "ETag, Idempotency-Key, Allow, Content-Disposition");
        res.set_header("Access-Control-Max-Age", "600");
    }

    void serve(const httplib::Request& req, httplib::Response& res) {
        const auto out = gw_->handle(to_gateway(req));
        cors(req, res);
        res.status = out.status;
        for (const auto& [k, v] : out.headers) res.set_header(k, v);
        res.set_content(out.body, out.contentType);
    }

    gateway::Gateway* gw_;
    std::vector<std::string> cors_;
    httplib::Server svr_;
};

}  // namespace opencourier::http
