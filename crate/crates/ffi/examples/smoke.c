/* Build: cc smoke.c -I../include ../../../target/release/libtca_ffi.a -lm -lpthread -ldl */
#include <stdio.h>

#include "tca.h"

int main(int argc, char **argv) {
    TcaActivation *layer = NULL;
    if (tca_activation_identity(TCA_BASE_TED, 3, 2, &layer) != TCA_STATUS_OK) {
        fprintf(stderr, "identity: %s\n", tca_last_error());
        return 1;
    }
    double x[3] = {-2.0, 0.0, 2.0};
    double y[3];
    tca_activation_eval(layer, x, 3, y);
    for (int i = 0; i < 3; i++) {
        printf("ted(%g) = %.6f\n", x[i], y[i]);
    }
    tca_activation_free(layer);

    if (argc > 1) {
        TcaDbn *dbn = NULL;
        if (tca_dbn_load(argv[1], &dbn) != TCA_STATUS_OK) {
            fprintf(stderr, "load: %s\n", tca_last_error());
            return 1;
        }
        size_t dim = 0, classes = 0;
        tca_dbn_dims(dbn, &dim, &classes);
        printf("dbn: %zu inputs, %zu classes\n", dim, classes);
        tca_dbn_free(dbn);
    }
    return 0;
}
