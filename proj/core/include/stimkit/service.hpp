#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include "stimkit/calibrate.hpp"
#include "stimkit/device.hpp"
#include "stimkit/serialization.hpp"
#include "stimkit/study.hpp"

namespace stimkit {

inline constexpr std::size_t kMaxPreviewPoints = 3000;

struct ServiceResponse {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;

    Json json() const { return Json::parse(body); }
};

// STIMKIT_DATA_DIR when set and non-empty, else `fallback`.
std::filesystem::path resolve_data_dir(const std::filesystem::path& fallback);

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;  // 0 picks a free port
    std::filesystem::path data_dir = "stimkit-data";
    double sample_rate_hz = kDefaultSampleRateHz;
    std::optional<std::filesystem::path> lut_path;  // default LUT when empty
    std::vector<std::string> cors_origins;          // "*" allows any origin

    // Throws ValidationError for a bad port or sample rate.
    void validate() const;
};

// Request handling for the experiment service, independent of transport.
//
//   POST /sessions                         {participant_id?, rng_seed?} -> 201
//   GET  /sessions
//   GET  /sessions/{id}
//   POST /sessions/{id}/calibration        {category, action}
//   POST /sessions/{id}/predict            {grouping?, reference?, mode?, x?, apply?}
//   POST /sessions/{id}/trials/{k}/rating  {rating}
//   GET  /sessions/{id}/summary
//   POST /sessions/{id}/play               {category, level_index?}
//   GET  /sessions/{id}/events?since=N     text/event-stream
//   GET  /signals/preview?category=&level=&points=
//   GET  /profiles
//
// Sessions live in <data_dir>/sessions/<id>.json and are rewritten after
// every change. Actions on one session are serialized; different sessions
// and the analytics endpoints run in parallel.
class SessionService {
public:
    using Query = std::map<std::string, std::string>;

    // Loads every persisted session. Throws IoError when the data directory
    // is not writable or a session file cannot be read.
    explicit SessionService(const ServiceConfig& config);
    explicit SessionService(std::filesystem::path data_dir);
    ~SessionService();

    SessionService(const SessionService&) = delete;
    SessionService& operator=(const SessionService&) = delete;

    ServiceResponse handle(std::string_view method, std::string_view path, const Query& query = {},
                           std::string_view body = {});

    const std::filesystem::path& data_dir() const noexcept { return data_dir_; }
    std::vector<std::string> session_ids() const;
    std::filesystem::path session_path(const std::string& id) const;

private:
    struct Event {
        std::size_t seq;
        std::string type;
        Json data;
    };

    struct Slot {
        std::mutex mutex;
        SessionRecord record;
        std::vector<Event> events;
    };

    std::shared_ptr<Slot> find(const std::string& id) const;
    void persist(const std::string& id, const SessionRecord& record) const;
    static void emit(Slot& slot, std::string type, Json data);

    ServiceResponse create_session(std::string_view body);
    ServiceResponse list_sessions() const;
    ServiceResponse get_session(const std::string& id) const;
    ServiceResponse calibrate(const std::string& id, std::string_view body);
    ServiceResponse predict(const std::string& id, std::string_view body);
    ServiceResponse rate(const std::string& id, std::string_view trial, std::string_view body);
    ServiceResponse summary(const std::string& id) const;
    ServiceResponse play(const std::string& id, std::string_view body);
    ServiceResponse events(const std::string& id, const Query& query) const;
    ServiceResponse preview(const Query& query) const;
    ServiceResponse profiles() const;

    std::filesystem::path data_dir_;
    double sample_rate_hz_;
    ProfileSet profiles_;
    DacLut lut_;
    mutable std::shared_mutex sessions_mutex_;
    std::map<std::string, std::shared_ptr<Slot>> sessions_;
    std::size_t next_id_ = 1;
};

// HTTP front end. bind() claims the socket, listen() blocks until stop().
class HttpServer {
public:
    explicit HttpServer(SessionService& service, std::vector<std::string> cors_origins = {});
    ~HttpServer();

    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    // Port 0 picks a free port. Returns the bound port; throws IoError when
    // the address is unavailable.
    int bind(const std::string& host, int port);
    void listen();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace stimkit
