#pragma once

#include <cstdint>
#include <vector>

namespace maskfocus {

// A rectangular grid of codebook tokens plus a mask. Masked positions hold the
// MASK placeholder; their token value is ignored.
struct TokenGrid {
    int height = 0;
    int width = 0;
    std::vector<int> tokens;
    std::vector<std::uint8_t> mask;  // 1 = masked

    TokenGrid() = default;
    TokenGrid(int h, int w, int fill = 0)
        : height(h), width(w), tokens(static_cast<std::size_t>(h * w), fill),
          mask(static_cast<std::size_t>(h * w), 0) {}

    int size() const { return height * width; }
    int at(int row, int col) const { return tokens[static_cast<std::size_t>(row * width + col)]; }
    bool masked(int pos) const { return mask[static_cast<std::size_t>(pos)] != 0; }

    int masked_count() const {
        int n = 0;
        for (auto m : mask) n += m != 0;
        return n;
    }
    bool fully_unmasked() const { return masked_count() == 0; }

    std::vector<int> masked_positions() const {
        std::vector<int> out;
        for (int i = 0; i < size(); ++i) {
            if (masked(i)) out.push_back(i);
        }
        return out;
    }

    friend bool operator==(const TokenGrid&, const TokenGrid&) = default;
};

}  // namespace maskfocus
