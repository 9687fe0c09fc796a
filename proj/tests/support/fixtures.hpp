#pragma once

// On-disk VQA fixture: a handful of images whose "color", "brightness", and
// "count" are deterministic functions of the image index, with feature
// vectors that encode them. Small enough for CLI smoke tests, learnable
// enough for overfit runs.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "vqaforge/rng.hpp"
#include "vqaforge/tensor.hpp"

namespace vqaforge::testsupport {

struct VQAFixture {
  std::string questions_path;
  std::string annotations_path;
  std::string features_path;
  int question_count = 0;
};

inline VQAFixture write_vqa_fixture(const std::filesystem::path& dir, int n_images = 4,
                                    Index feature_dim = 8, std::uint64_t seed = 77) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  static const char* colors[] = {"red", "green", "blue", "yellow", "white", "black"};
  static const char* counts[] = {"1", "2", "3", "4", "5", "6"};
  Rng rng(seed);

  std::string questions = "{\"questions\": [";
  std::string annotations = "{\"annotations\": [";
  int qid = 0;
  auto add = [&](int img, const std::string& text, const char* type, const std::string& answer) {
    if (qid) {
      questions += ",";
      annotations += ",";
    }
    ++qid;
    questions += "{\"question_id\": " + std::to_string(qid) + ", \"image_id\": " +
                 std::to_string(img) + ", \"question\": \"" + text + "\"}";
    std::string humans;
    for (int k = 0; k < 10; ++k) {
      if (k) humans += ",";
      humans += "{\"answer\": \"" + answer + "\", \"answer_id\": " + std::to_string(k + 1) + "}";
    }
    annotations += "{\"question_id\": " + std::to_string(qid) + ", \"image_id\": " +
                   std::to_string(img) + ", \"answer_type\": \"" + type +
                   "\", \"multiple_choice_answer\": \"" + answer + "\", \"answers\": [" +
                   humans + "]}";
  };

  for (int i = 0; i < n_images; ++i) {
    int img = i + 1;
    add(img, "what color is the object", "other", colors[i % 6]);
    add(img, "is the picture bright", "yes/no", i % 2 ? "yes" : "no");
    add(img, "how many objects are there", "number", counts[i % 6]);
  }
  questions += "]}";
  annotations += "]}";

  std::string features;
  for (int i = 0; i < n_images; ++i) {
    features += "{\"image_id\": " + std::to_string(i + 1) + ", \"features\": [";
    for (Index d = 0; d < feature_dim; ++d) {
      if (d) features += ", ";
      // a one-hot-ish image code plus noise keeps the task learnable
      double v = (d == i % feature_dim ? 2.0 : 0.0) + rng.uniform(-0.25, 0.25);
      features += std::to_string(v);
    }
    features += "]}\n";
  }

  VQAFixture fx;
  fx.question_count = qid;
  auto write = [&](const char* name, const std::string& body) {
    fs::path p = dir / name;
    std::ofstream out(p, std::ios::binary);
    out << body;
    return p.string();
  };
  fx.questions_path = write("questions.json", questions);
  fx.annotations_path = write("annotations.json", annotations);
  fx.features_path = write("features.jsonl", features);
  return fx;
}

}  // namespace vqaforge::testsupport
