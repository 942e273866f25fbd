#pragma once

#include <memory>
#include <string>

#include "concise/trajectory.hpp"

namespace concise {

class Teacher {
 public:
  virtual ~Teacher() = default;
  virtual Trajectory generate(const Episode& e, double temperature, std::uint64_t seed) const = 0;
  virtual std::string identity() const = 0;
};

struct TeacherConfig {
  double verbosity = 50.0;  // expected thought length in tokens
  double error_rate = 0.1;  // chance of an invalid (incorrect or unhelpful) response
  int answer_reads = 3;     // reads of the asked fact
  int aux_reads = 3;        // reads of the supporting fact
  double distractor_share = 0.3;  // share of tail units that are distractor reads
  int max_len = 1024;

  void validate() const;
};

// Verbose rule-based teacher. It knows the documents, restates them in a
// long thought (verification reads, distractor reads, filler) and answers with
// the gold value plus one supporting fact. Sampling temperature is ignored.
class ScriptedTeacher : public Teacher {
 public:
  ScriptedTeacher(const World& world, TeacherConfig cfg);
  Trajectory generate(const Episode& e, double temperature, std::uint64_t seed) const override;
  std::string identity() const override;

 private:
  const World& world_;
  TeacherConfig cfg_;
};

// A trained policy used as teacher, sampled at the requested temperature.
class PolicyTeacher : public Teacher {
 public:
  PolicyTeacher(const World& world, Policy policy, int max_len = 128);
  Trajectory generate(const Episode& e, double temperature, std::uint64_t seed) const override;
  std::string identity() const override { return "policy"; }

 private:
  const World& world_;
  Policy policy_;
  int max_len_;
};

}  // namespace concise
