#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>

#include "pybox/dsl/exercise_spec.hpp"
#include "pybox/service/config.hpp"
#include "pybox/store/store.hpp"

namespace pybox::service {

// The HTTP API. Routes, JSON shapes and status codes are listed in
// docs/api.md.
class Service {
 public:
  // Opens the store and loads every exercise in config.exercise_dir
  // (lenient parsing; exercises with validation errors are skipped and
  // reported through load_warnings()).
  explicit Service(ServiceConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds config.host:config.port and returns the bound port.
  int bind();
  // Serves until stop(); bind() must have succeeded.
  void serve();
  // bind() + serve() on a background thread.
  int start();
  void stop();

  store::Store& store();
  const std::map<std::string, dsl::ExerciseSpec>& exercises() const;
  const std::vector<std::string>& load_warnings() const;

  // Hook point for outbound help notifications (webhook, mail); called after
  // the thread is stored.
  void on_help_filed(std::function<void(const store::HelpThread&)> hook);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace pybox::service
