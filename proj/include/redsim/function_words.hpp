#pragma once

// Fixed English function-word list (determiners, pronouns, prepositions,
// auxiliaries, conjunctions, particles). Treated as versioned data: changing
// it changes every stylometry report, so edits must bump the list version.

#include <array>
#include <string_view>
#include <unordered_set>

namespace redsim::textstats {

inline constexpr int kFunctionWordListVersion = 1;

inline constexpr std::array<std::string_view, 167> kFunctionWords = {
    // determiners and articles
    "a", "an", "the", "this", "that", "these", "those", "each", "every", "either", "neither", "some", "any", "no",
    "all", "both", "few", "many", "much", "more", "most", "several", "such", "which", "whose",
    // pronouns
    "i", "me", "my", "mine", "myself", "we", "us", "our", "ours", "ourselves", "you", "your", "yours", "yourself",
    "he", "him", "his", "himself", "she", "her", "hers", "herself", "it", "its", "itself", "they", "them", "their",
    "theirs", "themselves", "who", "whom", "what", "someone", "anyone", "everyone", "nobody", "something", "anything",
    "everything", "nothing", "one", "none",
    // prepositions
    "about", "above", "across", "after", "against", "along", "among", "around", "at", "before", "behind", "below",
    "beneath", "beside", "between", "beyond", "by", "despite", "down", "during", "except", "for", "from", "in",
    "inside", "into", "near", "of", "off", "on", "onto", "out", "outside", "over", "past", "since", "through",
    "throughout", "till", "to", "toward", "towards", "under", "until", "up", "upon", "with", "within", "without",
    // auxiliaries and copulas
    "am", "is", "are", "was", "were", "be", "been", "being", "have", "has", "had", "having", "do", "does", "did",
    "doing", "will", "would", "shall", "should", "can", "could", "may", "might", "must", "ought",
    // conjunctions and complementizers
    "and", "but", "or", "nor", "so", "yet", "although", "because", "if", "unless", "while", "whereas", "whether",
    "than", "as", "though", "once", "when", "where", "why", "how",
    // negation and common particles
    "not", "there", "then",
};

inline const std::unordered_set<std::string_view>& function_word_set() {
    static const std::unordered_set<std::string_view> set(kFunctionWords.begin(), kFunctionWords.end());
    return set;
}

inline bool is_function_word(std::string_view token) { return function_word_set().count(token) > 0; }

inline bool is_article(std::string_view token) { return token == "a" || token == "an" || token == "the"; }

}  // namespace redsim::textstats
