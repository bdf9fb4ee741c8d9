// args: 2
int A[4] = {10, 20, 30, 40};
int f(int i) {
    restrict A int *p = &A[0];
    p = p + i;
    *p = *p + 1;
    return *p + A[3];
}
