#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "caac/errors.hpp"

namespace caac {

using TokenId = std::int32_t;

enum class Modality : std::uint8_t { Image = 0, Query = 1, Generated = 2 };

/// Token ids plus modality tags. Layout is always
/// [image x N_i][query x N_q >= 1][generated x N_g].
class TokenSequence {
public:
    TokenSequence() = default;

    static TokenSequence prompt(std::span<const TokenId> image, std::span<const TokenId> query) {
        if (query.empty()) throw DomainError("TokenSequence: query must contain at least one token");
        TokenSequence s;
        s.ids_.assign(image.begin(), image.end());
        s.modality_.assign(image.size(), Modality::Image);
        s.ids_.insert(s.ids_.end(), query.begin(), query.end());
        s.modality_.insert(s.modality_.end(), query.size(), Modality::Query);
        s.image_count_ = image.size();
        s.query_count_ = query.size();
        return s;
    }

    /// Build from raw parallel arrays, validating the layout invariant.
    static TokenSequence from_parts(std::vector<TokenId> ids, std::vector<Modality> modality) {
        if (ids.size() != modality.size())
            throw DomainError("TokenSequence: ids and modality differ in length");
        TokenSequence s;
        for (std::size_t i = 0; i < modality.size(); ++i) {
            if (i > 0 && modality[i] < modality[i - 1])
                throw DomainError("TokenSequence: modality order must be Image, Query, Generated");
            if (modality[i] == Modality::Image) ++s.image_count_;
            if (modality[i] == Modality::Query) ++s.query_count_;
        }
        if (s.query_count_ == 0) throw DomainError("TokenSequence: query must contain at least one token");
        s.ids_ = std::move(ids);
        s.modality_ = std::move(modality);
        return s;
    }

    void append_generated(TokenId id) {
        ids_.push_back(id);
        modality_.push_back(Modality::Generated);
    }

    std::size_t size() const noexcept { return ids_.size(); }
    std::size_t image_count() const noexcept { return image_count_; }
    std::size_t query_count() const noexcept { return query_count_; }
    std::size_t prompt_length() const noexcept { return image_count_ + query_count_; }
    std::size_t generated_count() const noexcept { return ids_.size() - prompt_length(); }

    /// Generation step whose prediction row is `pos`. Rows inside the prompt map to 0.
    std::size_t generation_index(std::size_t pos) const noexcept {
        const std::size_t last_prompt = prompt_length() - 1;
        return pos > last_prompt ? pos - last_prompt : 0;
    }

    const std::vector<TokenId>& ids() const noexcept { return ids_; }
    const std::vector<Modality>& modality() const noexcept { return modality_; }
    TokenId operator[](std::size_t i) const { return ids_[i]; }

    std::span<const TokenId> generated() const {
        return std::span<const TokenId>(ids_).subspan(prompt_length());
    }

    bool operator==(const TokenSequence&) const = default;

private:
    std::vector<TokenId> ids_;
    std::vector<Modality> modality_;
    std::size_t image_count_ = 0;
    std::size_t query_count_ = 0;
};

}  // namespace caac
