// Regenerates the prompt golden files. Review the diff before committing:
// the goldens are the reference the prompt tests hold the builder to.

#include <fstream>
#include <iostream>

#include "support.hpp"

int main(int argc, char** argv) {
    if (argc != 2) {
        std::cerr << "usage: make_goldens <golden-dir>\n";
        return 2;
    }
    for (int n : {0, 1, 3}) {
        for (auto modality : {adaptagent::Modality::multimodal, adaptagent::Modality::text_only}) {
            const auto path = std::string(argv[1]) + "/" + testsupport::golden_name(n, modality);
            std::ofstream(path, std::ios::binary) << testsupport::skeleton_prompt(n, modality);
            std::cout << path << "\n";
        }
    }
    return 0;
}
