// args:
int G[3] = {1, 2, 3};
int f(void) {
    restrict G int *p = &G[2];
    *p = 7;
    p = p - 1;
    *p = *p * 5;
    return G[0] + G[1] + G[2];
}
