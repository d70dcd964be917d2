#pragma once

// HTTP/JSON front for a Session. Error bodies are {"code", "message"}.

#include <oeg/service.hpp>

#include <httplib.h>
#include <json.hpp>

#include <functional>
#include <string>

namespace oeg {

inline int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::not_found: return 404;
    case ErrorCode::duplicate_category:
    case ErrorCode::unknown_category:
    case ErrorCode::no_known_categories:
    case ErrorCode::no_templates_for_affordance:
    case ErrorCode::no_reachable_grasp:
    case ErrorCode::unknown_affordance: return 409;
    case ErrorCode::parse_error:
    case ErrorCode::empty_cloud:
    case ErrorCode::degenerate_cloud:
    case ErrorCode::insufficient_neighbors:
    case ErrorCode::dimension_mismatch:
    case ErrorCode::wrong_variant:
    case ErrorCode::invalid_argument: return 422;
    default: return 500;
  }
}

inline nlohmann::json error_body(std::string_view code, const std::string& message) {
  return {{"code", code}, {"message", message}};
}

class HttpService {
 public:
  explicit HttpService(Session& session) : session_(session) { routes(); }

  httplib::Server& server() { return server_; }

  int bind_any(const std::string& host = "127.0.0.1") { return server_.bind_to_any_port(host); }
  bool bind(const std::string& host, int port) { return server_.bind_to_port(host, port); }
  bool listen() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() { server_.wait_until_ready(); }

 private:
  using Handler = std::function<nlohmann::json(const httplib::Request&)>;

  static std::uint64_t track_id(const httplib::Request& req) {
    try {
      return std::stoull(req.matches[1].str());
    } catch (const std::exception&) {
      throw Error(ErrorCode::not_found, "unknown track_id " + req.matches[1].str());
    }
  }

  static nlohmann::json body(const httplib::Request& req) {
    if (req.body.empty()) return nlohmann::json::object();
    try {
      return nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::invalid_argument, std::string("malformed JSON body: ") + e.what());
    }
  }

  static std::uint64_t body_track_id(const nlohmann::json& b) {
    const auto& v = detail::field(b, "track_id");
    if (!v.is_number_unsigned()) throw Error(ErrorCode::invalid_argument, "track_id must be a non-negative integer");
    return v.get<std::uint64_t>();
  }

  static void reply(httplib::Response& res, int status, const nlohmann::json& j) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
  }

  static httplib::Server::Handler wrap(Handler h, int ok_status = 200) {
    return [h = std::move(h), ok_status](const httplib::Request& req, httplib::Response& res) {
      try {
        reply(res, ok_status, h(req));
      } catch (const Error& e) {
        reply(res, http_status(e.code()), error_body(code_name(e.code()), e.what()));
      } catch (const nlohmann::json::exception& e) {
        reply(res, 422, error_body("invalid_argument", e.what()));
      } catch (const std::exception& e) {
        reply(res, 500, error_body("internal", e.what()));
      }
    };
  }

  void routes() {
    server_.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                 {"Access-Control-Allow-Headers", "Content-Type"},
                                 {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    server_.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server_.Post("/objects", wrap([this](const auto& req) { return session_.add_object_json(body(req)); }, 201));
    server_.Get(R"(/objects/(\d+))", wrap([this](const auto& req) { return session_.object_json(track_id(req)); }));
    server_.Post("/teach", wrap([this](const auto& req) {
      const auto b = body(req);
      return session_.teach(body_track_id(b), detail::string_field(b, "category"));
    }));
    server_.Get(R"(/ask/(\d+))", wrap([this](const auto& req) { return session_.ask(track_id(req)); }));
    server_.Post("/correct", wrap([this](const auto& req) {
      const auto b = body(req);
      return session_.correct(body_track_id(b), detail::string_field(b, "category"));
    }));
    server_.Post("/teach-affordance", wrap([this](const auto& req) {
      const auto b = body(req);
      return session_.teach_affordance(body_track_id(b), detail::string_field(b, "label"));
    }));
    server_.Post("/teach-grasp", wrap([this](const auto& req) {
      const auto b = body(req);
      return session_.teach_grasp_json(body_track_id(b), b);
    }));
    server_.Post(R"(/grasp/(\d+))", wrap([this](const auto& req) {
      const auto b = body(req);
      std::optional<std::string> affordance;
      if (b.is_object() && b.contains("affordance") && !b.at("affordance").is_null())
        affordance = detail::string_field(b, "affordance");
      return session_.grasp(track_id(req), affordance);
    }));
    server_.Get("/memory", wrap([this](const auto&) { return session_.memory(); }));
    server_.Get("/metrics", wrap([this](const auto&) { return session_.metrics(); }));

    server_.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return;
      const std::string code = res.status == 404 ? "not_found" : "http_error";
      reply(res, res.status, error_body(code, "no such endpoint"));
    });
  }

  Session& session_;
  httplib::Server server_;
};

}  // namespace oeg
