#include "looprune/dataset.hpp"

#include <fstream>
#include <json.hpp>

namespace looprune {
namespace {

using nlohmann::json;

[[noreturn]] void fail(std::size_t line, const std::string& what) {
  throw DatasetError(line, what);
}

std::string require_string(const json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) fail(line, std::string("missing field '") + key + "'");
  if (!it->is_string()) fail(line, std::string("field '") + key + "' must be a string");
  return it->get<std::string>();
}

std::vector<std::string> string_array(const json& v, const char* key, std::size_t line) {
  if (!v.is_array()) fail(line, std::string("field '") + key + "' must be an array");
  std::vector<std::string> out;
  for (const auto& e : v) {
    if (!e.is_string())
      fail(line, std::string("field '") + key + "' must contain strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

json scores_to_json(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(x);
  return a;
}

}  // namespace

DatasetRecord parse_record(std::string_view line, std::size_t line_no,
                           const AbbreviationList& abbreviations) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    fail(line_no, std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) fail(line_no, "record must be a JSON object");

  DatasetRecord rec;
  rec.id = require_string(j, "id", line_no);
  rec.question = require_string(j, "question", line_no);
  if (rec.question.empty()) fail(line_no, "question must be non-empty");
  if (auto it = j.find("answers"); it != j.end())
    rec.answers = string_array(*it, "answers", line_no);

  auto pit = j.find("passages");
  if (pit == j.end() || !pit->is_array()) fail(line_no, "field 'passages' must be an array");
  for (std::size_t i = 0; i < pit->size(); ++i) {
    const json& pj = (*pit)[i];
    const std::string where = "passages[" + std::to_string(i) + "]";
    if (!pj.is_object()) fail(line_no, where + " must be an object");
    std::string doc_id = "p" + std::to_string(i);
    if (auto it = pj.find("doc_id"); it != pj.end()) {
      if (!it->is_string()) fail(line_no, where + ".doc_id must be a string");
      doc_id = it->get<std::string>();
    }
    std::optional<std::vector<int>> labels;
    if (auto it = pj.find("labels"); it != pj.end()) {
      if (!it->is_array()) fail(line_no, where + ".labels must be an array");
      labels.emplace();
      for (const auto& y : *it) {
        if (!y.is_number_integer() || (y.get<int>() != 0 && y.get<int>() != 1))
          fail(line_no, where + ".labels must contain 0 or 1");
        labels->push_back(y.get<int>());
      }
    }
    const bool has_text = pj.contains("text");
    const bool has_sentences = pj.contains("sentences");
    if (has_text == has_sentences)
      fail(line_no, where + " needs exactly one of 'text' or 'sentences'");
    Passage p;
    try {
      if (has_text) {
        if (!pj["text"].is_string()) fail(line_no, where + ".text must be a string");
        p = segment(pj["text"].get<std::string>(), abbreviations);
        p.doc_id = doc_id;
        if (labels && labels->size() != p.size())
          fail(line_no, where + ": " + std::to_string(labels->size()) +
                            " labels for " + std::to_string(p.size()) + " sentences");
        p.labels = std::move(labels);
      } else {
        p = passage_from_sentences(doc_id,
                                   string_array(pj["sentences"], "sentences", line_no),
                                   std::move(labels));
      }
    } catch (const std::invalid_argument& e) {
      fail(line_no, where + ": " + e.what());
    }
    rec.passages.push_back(std::move(p));
  }
  return rec;
}

std::string serialize_record(const DatasetRecord& record) {
  json j;
  j["id"] = record.id;
  j["question"] = record.question;
  json passages = json::array();
  for (const auto& p : record.passages) {
    json pj;
    pj["doc_id"] = p.doc_id;
    json sentences = json::array();
    for (const auto& s : p.sentences) sentences.push_back(s.text);
    pj["sentences"] = std::move(sentences);
    if (p.labels) pj["labels"] = *p.labels;
    passages.push_back(std::move(pj));
  }
  j["passages"] = std::move(passages);
  j["answers"] = record.answers;
  return j.dump();
}

std::vector<DatasetRecord> read_dataset(const std::string& path,
                                        const AbbreviationList& abbreviations) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read dataset: " + path);
  std::vector<DatasetRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_record(line, line_no, abbreviations));
  }
  return out;
}

void write_dataset(const std::string& path, const std::vector<DatasetRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& r : records) out << serialize_record(r) << '\n';
}

std::vector<TrainingExample> to_training_examples(
    const std::vector<DatasetRecord>& records) {
  std::vector<TrainingExample> out;
  for (const auto& r : records) {
    for (const auto& p : r.passages) {
      if (!p.labels) continue;
      TrainingExample ex;
      ex.query = r.question;
      for (const auto& s : p.sentences) ex.sentences.push_back(s.text);
      ex.labels = *p.labels;
      out.push_back(std::move(ex));
    }
  }
  return out;
}

IdfTable idf_from_records(const std::vector<DatasetRecord>& records) {
  std::vector<std::string> docs;
  for (const auto& r : records)
    for (const auto& p : r.passages) docs.push_back(p.text());
  return IdfTable::build(docs);
}

PruneRecord make_prune_record(const DatasetRecord& record,
                              const CompressionResult& result,
                              const std::string& token_counter) {
  PruneRecord pr;
  pr.id = record.id;
  pr.kept = result.kept;
  pr.compressed_text = result.compressed_text;
  pr.ratio = result.ratio;
  pr.latency_seconds = result.latency_seconds;
  pr.token_counter = token_counter;
  pr.passages = result.passages;
  return pr;
}

std::string serialize_prune_record(const PruneRecord& r) {
  json j;
  j["id"] = r.id;
  json kept = json::array();
  for (const auto& k : r.kept) kept.push_back({k.passage, k.sentence});
  j["kept"] = std::move(kept);
  j["compressed_text"] = r.compressed_text;
  j["ratio"] = r.ratio;
  if (r.latency_seconds) j["latency_seconds"] = *r.latency_seconds;
  j["token_counter"] = r.token_counter;
  json diags = json::array();
  for (const auto& d : r.passages) {
    json dj;
    dj["gated"] = d.gated;
    dj["p0"] = d.p0;
    dj["deltas"] = scores_to_json(d.deltas);
    dj["tau"] = d.tau ? json(*d.tau) : json(nullptr);
    diags.push_back(std::move(dj));
  }
  j["passages"] = std::move(diags);
  return j.dump();
}

PruneRecord parse_prune_record(std::string_view line, std::size_t line_no) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    fail(line_no, std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) fail(line_no, "record must be a JSON object");
  PruneRecord r;
  r.id = require_string(j, "id", line_no);
  r.compressed_text = require_string(j, "compressed_text", line_no);
  if (auto it = j.find("token_counter"); it != j.end() && it->is_string())
    r.token_counter = it->get<std::string>();
  try {
    r.ratio = j.at("ratio").get<double>();
    if (auto it = j.find("latency_seconds"); it != j.end())
      r.latency_seconds = it->get<double>();
    for (const auto& k : j.at("kept")) {
      if (!k.is_array() || k.size() != 2) fail(line_no, "kept entries must be [p, s] pairs");
      r.kept.push_back({k[0].get<std::size_t>(), k[1].get<std::size_t>()});
    }
    if (auto it = j.find("passages"); it != j.end()) {
      for (const auto& dj : *it) {
        PassageDiagnostics d;
        d.gated = dj.at("gated").get<bool>();
        d.p0 = dj.at("p0").get<double>();
        d.deltas = dj.at("deltas").get<std::vector<double>>();
        if (!dj.at("tau").is_null()) d.tau = dj.at("tau").get<double>();
        r.passages.push_back(std::move(d));
      }
    }
  } catch (const json::exception& e) {
    fail(line_no, std::string("schema violation: ") + e.what());
  }
  for (std::size_t i = 1; i < r.kept.size(); ++i)
    if (!(r.kept[i - 1] < r.kept[i])) fail(line_no, "kept indices must be sorted and unique");
  return r;
}

}  // namespace looprune
