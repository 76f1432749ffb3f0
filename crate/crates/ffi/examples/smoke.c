#include <stdio.h>
#include "vidmon.h"

int main(void) {
    VmEngine *engine = NULL;
    VmQuery *query = NULL;
    VmStream *stream = NULL;
    char *out = NULL;

    if (vm_engine_new("[simulator]\nn_frames = 500\n", &engine) != VM_STATUS_OK ||
        vm_query_parse(engine, "SELECT FRAMES WHERE COUNT(car) >= 1", &query) != VM_STATUS_OK ||
        vm_stream_simulate(engine, &stream) != VM_STATUS_OK ||
        vm_run(engine, query, stream, &out) != VM_STATUS_OK) {
        fprintf(stderr, "error: %s\n", vm_last_error());
        return 1;
    }
    printf("%zu frames\n%s", vm_stream_len(stream), out);
    vm_string_free(out);
    vm_stream_free(stream);
    vm_query_free(query);
    vm_engine_free(engine);
    return 0;
}
