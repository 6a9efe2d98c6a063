/* reproduction harness: calls the flagged function with a hostile argument */
#include <stddef.h>
#include <stdint.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include <unistd.h>
#include <ctype.h>
#include <pthread.h>
#include <sys/types.h>

char *gets(char *);

static char *harness_payload(void)
{
    static const char text[] = "$payload";
    char *p = malloc(sizeof(text) + 1);
    memcpy(p, text, sizeof(text));
    return p;
}

$callees

$function

int main(void)
{
$setup
    $call;
    return 0;
}
