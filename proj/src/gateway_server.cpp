#include "stylecqa/gateway_server.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "stylecqa/error.hpp"

namespace stylecqa {
namespace {

void send_error(httplib::Response& res, Errc code, const std::string& message,
                std::optional<int> retry_after_ms = std::nullopt) {
    res.status = http_status_for(code);
    if (retry_after_ms) {
        res.set_header("Retry-After", std::to_string((*retry_after_ms + 999) / 1000));
    }
    json body = {{"error", {{"code", errc_name(code)}, {"message", message}}}};
    res.set_content(body.dump(), "application/json");
}

}  // namespace

int http_status_for(Errc code) noexcept {
    switch (code) {
        case Errc::EmptyInput:
        case Errc::CorruptDocument:
            return 400;
        case Errc::UnknownAccount:
        case Errc::UnknownCluster:
            return 404;
        case Errc::RateLimited:
            return 429;
        case Errc::Timeout:
            return 504;
        case Errc::BackendError:
        case Errc::UnknownAdapter:
        case Errc::MalformedResponse:
            return 502;
        default:
            return 500;
    }
}

struct GatewayServer::Impl {
    std::shared_ptr<Gateway> gateway;
    httplib::Server server;
};

GatewayServer::GatewayServer(std::shared_ptr<Gateway> gateway) : impl_(std::make_unique<Impl>()) {
    impl_->gateway = std::move(gateway);
    auto& srv = impl_->server;
    auto gw = impl_->gateway;

    srv.Post("/v1/answer", [gw](const httplib::Request& req, httplib::Response& res) {
        auto body = json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.is_object()) {
            send_error(res, Errc::CorruptDocument, "request body must be a JSON object");
            return;
        }
        try {
            const auto request = AnswerRequest::from_json(body);
            res.set_content(gw->answer(request).to_json().dump(), "application/json");
        } catch (const Error& e) {
            send_error(res, e.code(), e.what(), e.retry_after_ms());
        } catch (const std::exception& e) {
            send_error(res, Errc::BackendError, e.what());
        }
    });

    srv.Get("/v1/healthz", [gw](const httplib::Request&, httplib::Response& res) {
        json body = {{"status", "ok"},
                     {"clusters", gw->tree()->leaves().size()},
                     {"registry_epoch", gw->adapters().epoch()}};
        res.set_content(body.dump(), "application/json");
    });

    srv.Get(R"(/v1/resolve/([^/]+))", [gw](const httplib::Request& req, httplib::Response& res) {
        const std::string account = req.matches[1];
        try {
            const auto r = gw->resolve(account);
            json body = {{"account_id", account}, {"cluster", r.cluster.to_json()}};
            body["adapter"] = r.adapter ? r.adapter->to_json() : json(nullptr);
            res.set_content(body.dump(), "application/json");
        } catch (const Error& e) {
            send_error(res, e.code(), e.what());
        }
    });
}

GatewayServer::~GatewayServer() {
    stop();
}

int GatewayServer::bind_any_port(const std::string& host) {
    return impl_->server.bind_to_any_port(host);
}

bool GatewayServer::bind(const std::string& host, int port) {
    return impl_->server.bind_to_port(host, port);
}

bool GatewayServer::listen_after_bind() {
    spdlog::info("gateway listening");
    return impl_->server.listen_after_bind();
}

void GatewayServer::stop() {
    if (impl_) impl_->server.stop();
}

void GatewayServer::wait_until_ready() const {
    impl_->server.wait_until_ready();
}

}  // namespace stylecqa
