#pragma once

// Contract for extracting activations from an external checkpoint. A bridge
// process owns the real model; it fills an ExtractionJob, wraps the model in
// LanguageModel and writes the result with save_dataset.

#include <filesystem>
#include <string>

#include "masteer/activation_store.hpp"
#include "masteer/model.hpp"
#include "masteer/toy_transformer.hpp"

namespace masteer {

struct ExtractionJob {
  std::string model_ref;
  std::filesystem::path corpus;
  std::filesystem::path output;
  std::string precision = "float32";
  std::string prompt_template = "plain";
  // What the caller believes the checkpoint looks like; checked before any pass.
  std::size_t num_layers = 0;
  std::size_t hidden_dim = 0;
};

inline void check_job(const ExtractionJob& job, const LanguageModel& model) {
  if (job.num_layers != model.num_layers() || job.hidden_dim != model.hidden_dim()) {
    fail(ErrorKind::shape_mismatch, "job declares L=" + std::to_string(job.num_layers) + ", d=" +
                                        std::to_string(job.hidden_dim) + " but '" + model.model_id() +
                                        "' has L=" + std::to_string(model.num_layers()) +
                                        ", d=" + std::to_string(model.hidden_dim()));
  }
}

/// Whole-corpus checks that must pass before the model is touched.
inline void check_extractable(const SampleCorpus& corpus) {
  validate_corpus(corpus);
  for (const auto& s : corpus.samples) {
    if (s.question.empty()) fail(ErrorKind::invalid_data, "sample '" + s.id + "' has an empty question");
  }
}

inline ActivationSet run_extraction(const ExtractionJob& job, const LanguageModel& model,
                                    const SampleCorpus& corpus) {
  check_job(job, model);
  check_extractable(corpus);
  ActivationSet acts;
  try {
    acts = extract_activations(model, corpus);
  } catch (const Error& e) {
    fail(e.kind(), "extraction job for '" + job.model_ref + "': " + e.what());
  }
  acts.extraction_mode = "teacher-forced; template=" + job.prompt_template + "; precision=" + job.precision;
  return acts;
}

}  // namespace masteer
