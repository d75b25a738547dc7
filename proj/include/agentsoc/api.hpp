#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>

#include "agentsoc/pipeline.hpp"

namespace httplib {
class Server;
}

namespace agentsoc::api {

struct Request {
    std::string method;
    std::string path;
    std::map<std::string, std::string> query;
    std::string body;
    std::string authorization;  // raw Authorization header
};

struct Response {
    int status = 200;
    json body;
};

// Transport-independent request handling over a run journal.
class Service {
public:
    // The journal directory must exist; a journal without run.json serves empty lists.
    explicit Service(std::filesystem::path journal_dir, std::string token = {});
    ~Service();

    Response handle(const Request& request);
    pipeline::Journal& journal() { return journal_; }

private:
    Response incidents(const Request& r);
    Response incident(const std::string& id);
    Response rescore(const std::string& id, const std::string& body);
    Response approvals();
    Response decide(const std::string& id, const std::string& body);
    Response metrics();

    pipeline::Journal journal_;
    std::string token_;
    std::unique_ptr<knowledge::KnowledgeStore> store_;
    std::unique_ptr<pipeline::Engine> engine_;
};

Response error_response(int status, const std::string& error, const std::string& detail);

// cpp-httplib front end.
class HttpServer {
public:
    explicit HttpServer(Service& service);
    ~HttpServer();

    // Returns the bound port (useful with port 0). Error when the address cannot be bound.
    int bind(const std::string& host, int port);
    void run();  // blocks until stop()
    void stop();

private:
    Service& service_;
    std::unique_ptr<httplib::Server> server_;
};

}  // namespace agentsoc::api
