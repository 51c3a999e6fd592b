/// @file gateway_server.hpp
/// @brief HTTP front end for the gateway: POST /v1/answer, GET /v1/healthz,
/// GET /v1/resolve/{account_id}. Schemas in docs/wire_formats.md.

#pragma once

#include <memory>
#include <string>

#include "stylecqa/error.hpp"
#include "stylecqa/serving_gateway.hpp"

namespace stylecqa {

/// HTTP status used for each error code on the wire.
int http_status_for(Errc code) noexcept;

class GatewayServer {
public:
    explicit GatewayServer(std::shared_ptr<Gateway> gateway);
    ~GatewayServer();
    GatewayServer(const GatewayServer&) = delete;
    GatewayServer& operator=(const GatewayServer&) = delete;

    /// Binds to an ephemeral port and returns it, or -1.
    int bind_any_port(const std::string& host);
    bool bind(const std::string& host, int port);
    /// Blocks until stop().
    bool listen_after_bind();
    void stop();
    void wait_until_ready() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace stylecqa
