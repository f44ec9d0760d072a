#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "vars/dataset.hpp"
#include "vars/model.hpp"

namespace vars {

struct HttpResponse {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
};

// Binary PGM of one frame: "P5\n<W> <H>\n255\n" then round(v * 255) bytes.
std::string encode_pgm(std::span<const double> frame, std::size_t height, std::size_t width);

// The API behind the HTTP layer. Thread-safe: reads share a lock, writes take
// it exclusively.
class ServiceCore {
public:
    // `checkpoints` maps a name to a checkpoint file; all are loaded up front.
    ServiceCore(Manifest manifest, std::filesystem::path manifest_path,
                const std::map<std::string, std::filesystem::path>& checkpoints);

    // Loads the manifest (file or directory). Checkpoints are named after
    // their file stem; the first one is also reachable as "default".
    static std::unique_ptr<ServiceCore> open(const std::filesystem::path& manifest,
                                             const std::vector<std::filesystem::path>& checkpoints);

    HttpResponse list_actions(const std::optional<std::string>& page,
                              const std::optional<std::string>& page_size) const;
    HttpResponse get_action(const std::string& action_id) const;
    HttpResponse get_frame(const std::string& action_id, const std::string& clip, const std::string& frame) const;
    HttpResponse put_annotation(const std::string& action_id, const std::string& body);
    HttpResponse predict(const std::string& action_id, const std::string& body) const;

    // Routes one request; unknown paths give 404, unsupported methods 405.
    HttpResponse handle(const std::string& method, const std::string& path,
                        const std::map<std::string, std::string>& query, const std::string& body);

    std::vector<std::string> checkpoint_names() const;
    const std::filesystem::path& manifest_path() const { return manifest_path_; }

private:
    mutable std::shared_mutex mutex_;
    Manifest manifest_;
    std::filesystem::path manifest_path_;
    std::map<std::string, std::shared_ptr<const MvfModel>> models_;
};

// HTTP server over a ServiceCore.
class HttpServer {
public:
    explicit HttpServer(ServiceCore& core);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    // Binds (port 0 picks a free one) and returns the bound port, -1 on failure.
    int bind(const std::string& host, int port);
    // Blocks until stop().
    bool listen();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace vars
