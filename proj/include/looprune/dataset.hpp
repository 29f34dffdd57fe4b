#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "looprune/eval.hpp"
#include "looprune/pruner.hpp"
#include "looprune/segmenter.hpp"
#include "looprune/trainer.hpp"

namespace looprune {

// One JSONL dataset line:
//   {"id", "question", "passages": [{"doc_id", "text" | "sentences",
//    "labels"?}], "answers"?}
using DatasetRecord = EvalQuestion;

class DatasetError : public std::runtime_error {
 public:
  DatasetError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Passages given as "text" are segmented; "sentences" are taken verbatim.
DatasetRecord parse_record(std::string_view line, std::size_t line_no,
                           const AbbreviationList& abbreviations = AbbreviationList::builtin());
// Always writes pre-split "sentences" (and "labels" when present).
std::string serialize_record(const DatasetRecord& record);

std::vector<DatasetRecord> read_dataset(
    const std::string& path,
    const AbbreviationList& abbreviations = AbbreviationList::builtin());
void write_dataset(const std::string& path, const std::vector<DatasetRecord>& records);

// Labeled passages become training examples; unlabeled ones are skipped.
std::vector<TrainingExample> to_training_examples(
    const std::vector<DatasetRecord>& records);

// Corpus-derived IDF with one document per passage.
IdfTable idf_from_records(const std::vector<DatasetRecord>& records);

// Prune output line.
struct PruneRecord {
  std::string id;
  std::vector<KeptSentence> kept;
  std::string compressed_text;
  double ratio = 0.0;
  std::optional<double> latency_seconds;
  std::string token_counter;
  std::vector<PassageDiagnostics> passages;
};

PruneRecord make_prune_record(const DatasetRecord& record,
                              const CompressionResult& result,
                              const std::string& token_counter);
std::string serialize_prune_record(const PruneRecord& record);
// Throws DatasetError; kept indices must be sorted and unique.
PruneRecord parse_prune_record(std::string_view line, std::size_t line_no);

}  // namespace looprune
