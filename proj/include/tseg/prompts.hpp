#pragma once

// Prompt engineering for clip-level contrastive supervision: four template
// kinds (ordinal, statistical, semantic, integrated) and a closed word-level
// tokenizer over the templates, class names and number words.

#include <cctype>
#include <string>
#include <vector>

#include "tseg/data.hpp"

namespace tseg {

enum class PromptKind { ordinal, statistical, semantic, integrated };

inline const char* prompt_kind_name(PromptKind k) {
  switch (k) {
    case PromptKind::ordinal: return "ordinal";
    case PromptKind::statistical: return "statistical";
    case PromptKind::semantic: return "semantic";
    case PromptKind::integrated: return "integrated";
  }
  return "?";
}

struct PromptRecord {
  PromptKind kind;
  std::string text;
  std::vector<long> token_ids;
};

// "1st", "2nd", "3rd", "4th", ..., "11th", "12th", "13th", "21st", ...
inline std::string ordinal_word(long i) {
  const long mod100 = i % 100;
  const long mod10 = i % 10;
  const char* suffix = "th";
  if (mod100 < 11 || mod100 > 13) {
    if (mod10 == 1) suffix = "st";
    else if (mod10 == 2) suffix = "nd";
    else if (mod10 == 3) suffix = "rd";
  }
  return std::to_string(i) + suffix;
}

inline std::string render_ordinal_prompt(long position) {
  return "this is the " + ordinal_word(position) + " action in the video";
}

inline std::string render_statistical_prompt(long count) {
  return "this video clip contains " + std::to_string(count) + " actions in total";
}

inline std::string render_semantic_prompt(long position, const std::string& class_name) {
  return ordinal_word(position) + ", the person is performing the action step of " + class_name;
}

// Prompts for one clip, in order: one ordinal prompt per action position,
// one statistical prompt, one semantic prompt per action, and the integrated
// prompt (concatenated semantic prompts; equal to the single semantic prompt
// when the clip holds one action).
inline std::vector<PromptRecord> render_prompts(const Clip& clip,
                                                const std::vector<std::string>& class_names) {
  if (clip.ordinal_actions.empty() ||
      clip.action_count != static_cast<long>(clip.ordinal_actions.size()))
    contract_fail("render_prompts: clip has no derived action list");
  std::vector<PromptRecord> out;
  for (long i = 0; i < clip.action_count; ++i)
    out.push_back({PromptKind::ordinal, render_ordinal_prompt(i + 1), {}});
  out.push_back({PromptKind::statistical, render_statistical_prompt(clip.action_count), {}});
  std::string integrated;
  for (long i = 0; i < clip.action_count; ++i) {
    const int cls = clip.ordinal_actions[static_cast<size_t>(i)];
    if (cls < 0 || cls >= static_cast<int>(class_names.size()))
      contract_fail("render_prompts: class id out of range: " + std::to_string(cls));
    const std::string sem = render_semantic_prompt(i + 1, class_names[static_cast<size_t>(cls)]);
    out.push_back({PromptKind::semantic, sem, {}});
    if (i) integrated += " ";
    integrated += sem;
  }
  out.push_back({PromptKind::integrated, integrated, {}});
  return out;
}

// Lowercase word-level tokenizer over a closed vocabulary; commas are their
// own tokens and any word outside the vocabulary maps to the dedicated
// unknown token (id 0).
class Tokenizer {
 public:
  static constexpr long kUnknownId = 0;

  Tokenizer() = default;

  // Vocabulary: templates, ordinals/numbers up to max_count, class names.
  explicit Tokenizer(const std::vector<std::string>& class_names, long max_count = 16) {
    add_word("<unk>");
    add_word(",");
    add_text(render_statistical_prompt(1));
    add_text(render_ordinal_prompt(1));
    add_text(render_semantic_prompt(1, ""));
    for (long i = 1; i <= max_count; ++i) {
      add_word(ordinal_word(i));
      add_word(std::to_string(i));
    }
    for (auto& name : class_names) add_text(name);
  }

  std::vector<long> encode(const std::string& text) const {
    std::vector<long> out;
    for (auto& w : split(text)) {
      long id = kUnknownId;
      for (size_t i = 0; i < vocab_.size(); ++i)
        if (vocab_[i] == w) {
          id = static_cast<long>(i);
          break;
        }
      out.push_back(id);
    }
    return out;
  }

  long vocab_size() const { return static_cast<long>(vocab_.size()); }
  const std::vector<std::string>& vocabulary() const { return vocab_; }

  static std::vector<std::string> split(const std::string& text) {
    std::string norm;
    for (char c : text) {
      if (c == ',') {
        norm += " , ";
      } else {
        norm += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      }
    }
    std::vector<std::string> words;
    std::string cur;
    for (char c : norm + " ") {
      if (c == ' ' || c == '\t' || c == '\n') {
        if (!cur.empty()) words.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    return words;
  }

 private:
  void add_word(const std::string& w) {
    for (auto& v : vocab_)
      if (v == w) return;
    vocab_.push_back(w);
  }
  void add_text(const std::string& text) {
    for (auto& w : split(text)) add_word(w);
  }

  std::vector<std::string> vocab_;
};

inline std::vector<PromptRecord> render_and_tokenize(const Clip& clip,
                                                     const std::vector<std::string>& class_names,
                                                     const Tokenizer& tok) {
  auto prompts = render_prompts(clip, class_names);
  for (auto& p : prompts) p.token_ids = tok.encode(p.text);
  return prompts;
}

}  // namespace tseg
