/* Copyright 2026 The sr7t Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <httplib.h>

#include "sr7t/csv.hpp"
#include "sr7t/manifest.hpp"
#include "sr7t/survey.hpp"

namespace sr7t::survey {

using nlohmann::json;

namespace {

int status_of(SurveyError::Kind k) {
  switch (k) {
    case SurveyError::Kind::BadRequest:
      return 400;
    case SurveyError::Kind::NotFound:
      return 404;
    case SurveyError::Kind::Conflict:
      return 409;
  }
  return 500;
}

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
  try {
    auto j = json::parse(req.body);
    if (!j.is_object()) throw SurveyError(SurveyError::Kind::BadRequest, "request body must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw SurveyError(SurveyError::Kind::BadRequest, std::string("malformed JSON: ") + e.what());
  }
}

template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const SurveyError& e) {
      reply(res, status_of(e.kind), {{"error", e.what()}});
    } catch (const json::exception& e) {
      reply(res, 400, {{"error", std::string("bad request: ") + e.what()}});
    } catch (const std::exception& e) {
      reply(res, 500, {{"error", e.what()}});
    }
  };
}

std::string image_url(const std::string& study, const std::string& query, const std::string& label) {
  return "/api/studies/" + study + "/queries/" + query + "/images/" + label + ".png";
}

}  // namespace

struct SurveyServer::Impl {
  SurveyStore& store;
  httplib::Server server;
  explicit Impl(SurveyStore& s) : store(s) {}
};

SurveyServer::SurveyServer(SurveyStore& store) : impl_(std::make_unique<Impl>(store)) {
  auto& svr = impl_->server;
  auto& st = impl_->store;

  svr.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  svr.Options(".*", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });

  svr.Post("/api/studies", guarded([&st](const httplib::Request& req, httplib::Response& res) {
             const auto body = parse_body(req);
             const auto manifest = resolve_path(body.at("manifest").get<std::string>(), std::filesystem::current_path());
             const auto criteria = body.at("criteria").get<std::vector<std::string>>();
             const auto n_queries = body.at("n_queries").get<std::size_t>();
             const auto seed = body.value("seed", std::uint64_t{0});
             const auto name = body.value("name", std::string("study"));
             const auto subjects = load_study_manifest(manifest);
             const auto plan = plan_study(subjects, n_queries, criteria, seed, name);
             const auto id = st.create_study(plan, render_study(plan, subjects));
             reply(res, 201,
                   {{"study_id", id}, {"n_queries", plan.queries.size()}, {"k", plan.k()}, {"criteria", plan.criteria}});
           }));

  svr.Get("/api/studies/:id", guarded([&st](const httplib::Request& req, httplib::Response& res) {
            const auto& id = req.path_params.at("id");
            const auto plan = st.plan(id);
            json queries = json::array();
            for (const auto& q : plan.queries) queries.push_back(q.query_id);
            json labels = json::array();
            for (std::size_t i = 0; i < plan.k(); ++i) labels.push_back(slot_label(i));
            reply(res, 200,
                  {{"study_id", id},
                   {"name", plan.name},
                   {"criteria", plan.criteria},
                   {"queries", queries},
                   {"labels", labels}});
          }));

  svr.Post("/api/studies/:id/sessions", guarded([&st](const httplib::Request& req, httplib::Response& res) {
             const auto& id = req.path_params.at("id");
             const auto rater = parse_body(req).at("rater_id").get<std::string>();
             const auto token = st.open_session(id, rater);
             reply(res, 201, {{"token", token}, {"study_id", id}, {"rater_id", rater}});
           }));

  svr.Get("/api/sessions/:token/next", guarded([&st](const httplib::Request& req, httplib::Response& res) {
            const auto& token = req.path_params.at("token");
            const auto item = st.next(token);
            json progress = {{"answered", item.answered}, {"total", item.total}};
            if (item.complete) {
              reply(res, 200, {{"complete", true}, {"count", item.answered}, {"progress", progress}});
              return;
            }
            const auto study = st.session_study(token);
            json images = json::array();
            for (const auto& label : item.labels) {
              images.push_back({{"label", label}, {"url", image_url(study, item.query_id, label)}});
            }
            reply(res, 200,
                  {{"complete", false},
                   {"query_id", item.query_id},
                   {"criterion_index", item.criterion_index},
                   {"criterion", item.criterion},
                   {"images", images},
                   {"progress", progress}});
          }));

  svr.Get("/api/studies/:id/queries/:query/images/:file",
          guarded([&st](const httplib::Request& req, httplib::Response& res) {
            auto file = req.path_params.at("file");
            if (file.size() > 4 && file.compare(file.size() - 4, 4, ".png") == 0) file.resize(file.size() - 4);
            const auto png = st.image(req.path_params.at("id"), req.path_params.at("query"), file);
            res.status = 200;
            res.set_content(std::string(png.begin(), png.end()), "image/png");
          }));

  svr.Post("/api/sessions/:token/rankings", guarded([&st](const httplib::Request& req, httplib::Response& res) {
             const auto body = parse_body(req);
             const auto ranks = body.at("ranks").get<std::vector<int>>();
             const auto ack = st.submit(req.path_params.at("token"), body.at("query_id").get<std::string>(),
                                        body.at("criterion_index").get<int>(), ranks);
             reply(res, 200, ack.to_json());
           }));

  svr.Get("/api/studies/:id/export", guarded([&st](const httplib::Request& req, httplib::Response& res) {
            const auto flag = req.get_param_value("include_unfinished");
            const bool include = flag == "1" || flag == "true";
            const auto table = st.export_ranks(req.path_params.at("id"), include);
            res.status = 200;
            res.set_content(to_csv(stats::rank_table_csv(table)), "text/csv");
          }));
}

SurveyServer::~SurveyServer() { stop(); }

int SurveyServer::bind(const std::string& host, int port) {
  auto& svr = impl_->server;
  if (port == 0) {
    const int p = svr.bind_to_any_port(host);
    if (p < 0) throw std::runtime_error("cannot bind " + host);
    return p;
  }
  if (!svr.bind_to_port(host, port)) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void SurveyServer::serve() { impl_->server.listen_after_bind(); }

void SurveyServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

}  // namespace sr7t::survey
