#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fedmark {

enum class ModalityId { depth = 0, radar = 1, audio = 2 };

inline constexpr std::size_t kModalityCount = 3;
inline constexpr std::array<ModalityId, kModalityCount> kAllModalities = {
    ModalityId::depth, ModalityId::radar, ModalityId::audio};

// Desk-scale flattened feature widths. Full-scale shapes on the device were
// depth [16,112,112], radar [20,2,16,32,16], audio [20,87].
inline constexpr std::array<std::size_t, kModalityCount> kModalityDims = {64, 32, 16};

constexpr std::size_t index_of(ModalityId m) { return static_cast<std::size_t>(m); }
constexpr std::size_t modality_dim(ModalityId m) { return kModalityDims[index_of(m)]; }

std::string_view to_string(ModalityId m);
std::optional<ModalityId> parse_modality(std::string_view name);

// Fixed-slot map keyed by modality. Iteration order is always depth, radar, audio,
// which is what keeps aggregation and serialization order stable.
template <typename T>
class ModalityMap {
public:
    bool contains(ModalityId m) const { return slots_[index_of(m)].has_value(); }
    T& at(ModalityId m) { return slots_[index_of(m)].value(); }
    const T& at(ModalityId m) const { return slots_[index_of(m)].value(); }
    void set(ModalityId m, T value) { slots_[index_of(m)] = std::move(value); }
    void erase(ModalityId m) { slots_[index_of(m)].reset(); }
    const T* find(ModalityId m) const {
        return slots_[index_of(m)] ? &*slots_[index_of(m)] : nullptr;
    }

    std::vector<ModalityId> keys() const {
        std::vector<ModalityId> out;
        for (ModalityId m : kAllModalities)
            if (contains(m)) out.push_back(m);
        return out;
    }
    std::size_t size() const { return keys().size(); }
    bool empty() const { return size() == 0; }

    friend bool operator==(const ModalityMap&, const ModalityMap&) = default;

private:
    std::array<std::optional<T>, kModalityCount> slots_{};
};

// A set of modalities as a bitmask-backed value type.
class ModalitySet {
public:
    ModalitySet() = default;
    ModalitySet(std::initializer_list<ModalityId> ms) {
        for (ModalityId m : ms) insert(m);
    }
    static ModalitySet all() { return {ModalityId::depth, ModalityId::radar, ModalityId::audio}; }

    bool contains(ModalityId m) const { return (bits_ >> index_of(m)) & 1u; }
    void insert(ModalityId m) { bits_ |= 1u << index_of(m); }
    void erase(ModalityId m) { bits_ &= ~(1u << index_of(m)); }
    bool empty() const { return bits_ == 0; }
    std::size_t size() const { return static_cast<std::size_t>(__builtin_popcount(bits_)); }
    std::vector<ModalityId> members() const {
        std::vector<ModalityId> out;
        for (ModalityId m : kAllModalities)
            if (contains(m)) out.push_back(m);
        return out;
    }
    bool subset_of(const ModalitySet& other) const { return (bits_ & ~other.bits_) == 0; }

    friend bool operator==(const ModalitySet&, const ModalitySet&) = default;

private:
    unsigned bits_ = 0;
};

std::string to_string(const ModalitySet& s);

}  // namespace fedmark
