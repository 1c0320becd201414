#pragma once

// Published reference values for full-scale runs. These are comparison
// targets only: desk-scale fixtures cannot reproduce them, so reports flag
// them as reference-only numbers next to locally computed results.

#include <array>

namespace redsim::reference {

// --- study scale -----------------------------------------------------------

inline constexpr int kClintonUsers = 100;
inline constexpr int kClintonTargetComments2016 = 5220;
inline constexpr int kTrumpUsers = 387;
inline constexpr int kTrumpTargetComments2016 = 5488;

// --- generation settings ------------------------------------------------------

inline constexpr const char* kGenerationModel = "gpt-4-turbo";
inline constexpr double kTemperature = 0.0;
inline constexpr double kTopP = 1.0;
inline constexpr int kNRuns = 5;
inline constexpr std::array<double, 2> kTemperatureSweep = {0.5, 1.0};
inline constexpr int kLiveEmbeddingDim = 1536;
inline constexpr int kAlternativeEmbeddingDim = 384;  // sentence-transformer check

// --- share-level findings -------------------------------------------------------

// No-history (null) scenario: share of generated comments classified as
// anti-candidate.
inline constexpr double kNullAntiShareTrump = 0.018;
inline constexpr double kNullAntiShareClinton = 0.006;

// Fraction of selected users whose real history classifies as anti-candidate.
inline constexpr double kAntiHistoryUserShareTrump = 0.223;
inline constexpr double kAntiHistoryUserShareClinton = 0.110;

// Generated comments classified as violent, any scenario.
inline constexpr double kViolenceShareUpperBound = 0.01;

// Rank correlation of shared n-grams between real and generated corpora.
inline constexpr double kRankCorrelationLow = 0.5;
inline constexpr double kRankCorrelationHigh = 0.6;

// --- stylometry table (per-community feature means with standard errors) --------

struct FeatureRow {
    const char* group;
    double sentence_length_mean, sentence_length_err;
    double article_pct_mean, article_pct_err;
    double function_word_pct_mean, function_word_pct_err;
    double ttr_mean, ttr_err;
};

inline constexpr std::array<FeatureRow, 5> kFeatureTableTrump = {{
    {"real", 18.02, 0.58, 5.5937, 0.1055, 26.4009, 0.1823, 0.5088, 0.0093},
    {"real_history", 17.69, 0.24, 5.7767, 0.0948, 23.5404, 0.2322, 0.5623, 0.0099},
    {"no_history", 16.53, 0.17, 6.0776, 0.0908, 24.7235, 0.1592, 0.6128, 0.0082},
    {"pro_candidate", 16.97, 0.14, 5.3341, 0.0677, 24.0490, 0.1397, 0.5557, 0.0085},
    {"anti_candidate", 21.34, 0.13, 5.2051, 0.0673, 25.7248, 0.1254, 0.5697, 0.0083},
}};

inline constexpr std::array<FeatureRow, 5> kFeatureTableClinton = {{
    {"real", 17.67, 0.62, 5.4836, 0.1375, 26.6404, 0.3425, 0.4429, 0.0203},
    {"real_history", 20.01, 0.38, 6.2124, 0.1280, 26.2889, 0.3058, 0.4224, 0.0206},
    {"no_history", 17.00, 0.32, 5.8149, 0.1625, 25.3478, 0.2870, 0.4933, 0.0197},
    {"pro_candidate", 18.40, 0.26, 5.3380, 0.1377, 25.8587, 0.2060, 0.4474, 0.0202},
    {"anti_candidate", 19.72, 0.25, 5.8138, 0.1089, 25.6142, 0.1947, 0.4619, 0.0195},
}};

// --- detector table (5-class linear SVM, 10 runs) ---------------------------------

struct DetectorRow {
    const char* group;
    double precision_mean, precision_std;
    double recall_mean, recall_std;
    double f1_mean, f1_std;
};

inline constexpr std::array<DetectorRow, 5> kDetectorTableTrump = {{
    {"real", 0.9837, 0.0049, 0.9896, 0.0036, 0.9865, 0.0025},
    {"real_history", 0.6441, 0.0117, 0.5961, 0.0112, 0.6188, 0.0104},
    {"no_history", 0.7389, 0.0139, 0.6709, 0.0106, 0.7023, 0.0088},
    {"pro_candidate", 0.7722, 0.0107, 0.8243, 0.0196, 0.7951, 0.0074},
    {"anti_candidate", 0.7953, 0.0141, 0.8602, 0.0149, 0.8251, 0.0099},
}};

inline constexpr std::array<DetectorRow, 5> kDetectorTableClinton = {{
    {"real", 1.0000, 0.0000, 0.9850, 0.0072, 0.9923, 0.0037},
    {"real_history", 0.7480, 0.0200, 0.6200, 0.0257, 0.6758, 0.0205},
    {"no_history", 0.8546, 0.0352, 0.7250, 0.0247, 0.7801, 0.0221},
    {"pro_candidate", 0.6541, 0.0274, 0.7550, 0.0165, 0.6992, 0.0199},
    {"anti_candidate", 0.7574, 0.0211, 0.8750, 0.0302, 0.8094, 0.0217},
}};

inline constexpr double kDetectorAccuracyTrumpMean = 0.7881;
inline constexpr double kDetectorAccuracyTrumpStd = 0.0048;
inline constexpr double kDetectorAccuracyClintonMean = 0.7920;
inline constexpr double kDetectorAccuracyClintonStd = 0.0076;

// Absolute tolerance when comparing a full-scale rerun against the tables.
inline constexpr double kDetectorComparisonTolerance = 0.05;

}  // namespace redsim::reference
