#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace madrl {

struct ParamBlock {
    std::string name;
    Eigen::Index offset = 0;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;

    Eigen::Index size() const { return rows * cols; }
};

/// Flat parameter storage with named matrix-shaped blocks. Blocks tile the
/// flat array in insertion order with no gaps or overlaps; matrices are
/// stored column-major.
class ParamVector {
public:
    using MatMap = Eigen::Map<Eigen::MatrixXd>;
    using ConstMatMap = Eigen::Map<const Eigen::MatrixXd>;

    std::size_t add(std::string name, Eigen::Index rows, Eigen::Index cols) {
        if (rows < 0 || cols < 0) throw std::invalid_argument("ParamVector: negative block shape");
        for (const auto& b : blocks_)
            if (b.name == name) throw std::invalid_argument("ParamVector: duplicate block " + name);
        const Eigen::Index offset = data_.size();
        blocks_.push_back({std::move(name), offset, rows, cols});
        data_.conservativeResize(offset + rows * cols);
        data_.segment(offset, rows * cols).setZero();
        return blocks_.size() - 1;
    }

    MatMap block(std::size_t i) {
        const auto& b = blocks_.at(i);
        return MatMap(data_.data() + b.offset, b.rows, b.cols);
    }
    ConstMatMap block(std::size_t i) const {
        const auto& b = blocks_.at(i);
        return ConstMatMap(data_.data() + b.offset, b.rows, b.cols);
    }
    MatMap block(std::string_view name) { return block(index_of(name)); }
    ConstMatMap block(std::string_view name) const { return block(index_of(name)); }

    std::size_t index_of(std::string_view name) const {
        for (std::size_t i = 0; i < blocks_.size(); ++i)
            if (blocks_[i].name == name) return i;
        throw std::out_of_range("ParamVector: no block named " + std::string(name));
    }

    bool has(std::string_view name) const {
        for (const auto& b : blocks_)
            if (b.name == name) return true;
        return false;
    }

    const std::vector<ParamBlock>& blocks() const { return blocks_; }
    Eigen::VectorXd& flat() { return data_; }
    const Eigen::VectorXd& flat() const { return data_; }
    Eigen::Index size() const { return data_.size(); }

    bool same_layout(const ParamVector& other) const {
        if (blocks_.size() != other.blocks_.size()) return false;
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            const auto& a = blocks_[i];
            const auto& b = other.blocks_[i];
            if (a.name != b.name || a.rows != b.rows || a.cols != b.cols) return false;
        }
        return true;
    }

    bool operator==(const ParamVector& other) const {
        return same_layout(other) && data_ == other.data_;
    }

private:
    std::vector<ParamBlock> blocks_;
    Eigen::VectorXd data_;
};

}  // namespace madrl
