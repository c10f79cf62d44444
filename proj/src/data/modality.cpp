#include "fedmark/modality.hpp"

namespace fedmark {

std::string_view to_string(ModalityId m) {
    switch (m) {
        case ModalityId::depth: return "depth";
        case ModalityId::radar: return "radar";
        case ModalityId::audio: return "audio";
    }
    return "?";
}

std::optional<ModalityId> parse_modality(std::string_view name) {
    for (ModalityId m : kAllModalities)
        if (to_string(m) == name) return m;
    return std::nullopt;
}

std::string to_string(const ModalitySet& s) {
    std::string out;
    for (ModalityId m : s.members()) {
        if (!out.empty()) out += '+';
        out += to_string(m);
    }
    return out.empty() ? "none" : out;
}

}  // namespace fedmark
