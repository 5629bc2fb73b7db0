// pyboxd: the grading HTTP service.

#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "pybox/service/service.hpp"

namespace {

pybox::service::Service* g_service = nullptr;

void handle_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Exercise grading service"};
  std::string config_path;
  app.add_option("-c,--config", config_path, "JSON config file");
  CLI11_PARSE(app, argc, argv);

  try {
    auto config = config_path.empty() ? pybox::service::ServiceConfig{}
                                      : pybox::service::load_config(config_path);
    pybox::service::apply_env_overrides(config);
    pybox::service::Service service(config);
    for (const auto& w : service.load_warnings()) std::cerr << "pyboxd: " << w << "\n";
    const int port = service.bind();
    std::cerr << "pyboxd: " << service.exercises().size() << " exercises, listening on "
              << config.host << ":" << port << (config.test_mode ? " (test mode)" : "") << "\n";
    g_service = &service;
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    service.serve();
    g_service = nullptr;
  } catch (const std::exception& e) {
    std::cerr << "pyboxd: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
