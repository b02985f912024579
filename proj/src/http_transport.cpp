#ifdef FLAKY_HAVE_OPENSSL
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include "flaky/error.hpp"
#include "flaky/ingestion.hpp"

#include <algorithm>
#include <cctype>

namespace flaky {
namespace {

class HttplibTransport final : public HttpTransport {
public:
    explicit HttplibTransport(const std::string& base_url) : client_(base_url) {
        client_.set_follow_location(true);
        client_.set_connection_timeout(30);
        client_.set_read_timeout(120);
    }

    HttpResponse get(const std::string& path_and_query, const std::map<std::string, std::string>& headers) override {
        httplib::Headers h;
        for (const auto& [k, v] : headers) h.emplace(k, v);
        return convert(client_.Get(path_and_query, h), "GET " + path_and_query);
    }

    HttpResponse post(const std::string& path, const std::map<std::string, std::string>& headers,
                      const std::string& body) override {
        httplib::Headers h;
        for (const auto& [k, v] : headers) h.emplace(k, v);
        return convert(client_.Post(path, h, body, "application/json"), "POST " + path);
    }

private:
    static HttpResponse convert(httplib::Result res, const std::string& what) {
        if (!res) throw TransportError(what + " failed: " + httplib::to_string(res.error()));
        HttpResponse out;
        out.status = res->status;
        out.body = std::move(res->body);
        for (const auto& [k, v] : res->headers) {
            std::string key = k;
            std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
            out.headers[key] = v;
        }
        return out;
    }

    httplib::Client client_;
};

}  // namespace

HttpResponse HttpTransport::post(const std::string& path, const std::map<std::string, std::string>&,
                                 const std::string&) {
    throw TransportError("transport does not support POST " + path);
}

std::unique_ptr<HttpTransport> make_http_transport(const std::string& base_url) {
#ifndef FLAKY_HAVE_OPENSSL
    if (base_url.rfind("https://", 0) == 0) {
        throw TransportError("built without OpenSSL; https endpoints are unavailable");
    }
#endif
    return std::make_unique<HttplibTransport>(base_url);
}

}  // namespace flaky
